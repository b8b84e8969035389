//! Implementations of the five subcommands. Each one is a thin layer over
//! the core library: resolve configuration, move bytes between files and
//! core types, print a short summary. All randomness flows through a single
//! generator seeded from the resolved config, so rerunning a command with
//! the same inputs writes identical files.

use std::fs;
use std::path::Path;

use dsmhn_core::codes::BinaryCodes;
use dsmhn_core::data::{self, MultimodalDataset};
use dsmhn_core::model::NetworkParams;
use dsmhn_core::objective::PairwiseLossKind;
use dsmhn_core::retrieval::{self, RetrievalTask};
use dsmhn_core::trainer::{self, GradcheckConfig, Modality};
use dsmhn_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{LossName, Overrides, RunConfig};

/// `println!` that shrugs off a closed pipe, so `dsmhn ... | head` does not
/// abort the run; file outputs matter more than the chatter.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Loads `.csv` by extension, the binary dataset format otherwise.
fn load_dataset(path: &Path) -> Result<MultimodalDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => data::load_csv(path),
        _ => MultimodalDataset::load(path),
    }
}

pub fn synth(ov: &Overrides, out: &Path) -> Result<()> {
    let rc = RunConfig::resolve(ov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
    let ds = data::generate_synthetic(&rc.synth, &mut rng)?;
    let parts = data::split(&ds, &rc.split, &mut rng)?;
    let train = parts.database.subset(&parts.train_indices)?;

    fs::create_dir_all(out)?;
    ds.save(&out.join("dataset.dsmd"))?;
    parts.query.save(&out.join("query.dsmd"))?;
    parts.database.save(&out.join("database.dsmd"))?;
    train.save(&out.join("train.dsmd"))?;

    outln!(
        "synthesized {} items (d_x={}, d_y={}, {} classes, noise={})",
        ds.len(),
        ds.d_x(),
        ds.d_y(),
        ds.classes(),
        rc.synth.noise
    );
    outln!(
        "split: {} queries, {} database items, {} training items -> {}",
        parts.query.len(),
        parts.database.len(),
        train.len(),
        out.display()
    );
    Ok(())
}

pub fn train(dataset: &Path, ov: &Overrides, out: &Path) -> Result<()> {
    let rc = RunConfig::resolve(ov)?;
    let ds = load_dataset(dataset)?;
    let (cfg_x, cfg_y) = rc.network_configs(ds.d_x(), ds.d_y(), ds.classes());
    let tc = rc.train_config();
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);

    let (params_x, params_y, log) = trainer::train(&ds, &cfg_x, &cfg_y, &tc, &mut rng)?;

    fs::create_dir_all(out)?;
    params_x.save(&out.join("model_x.dsmp"))?;
    params_y.save(&out.join("model_y.dsmp"))?;
    trainer::write_train_log(&out.join("train_log.csv"), &log.reports, &rc.header_lines())?;

    if log.sampling_shortfalls > 0 {
        eprintln!(
            "note: {} pair draws fell short of the requested positive fraction",
            log.sampling_shortfalls
        );
    }
    let first = log.reports.first().map_or(f64::NAN, |r| r.total);
    let last = log.reports.last().map_or(f64::NAN, |r| r.total);
    outln!(
        "trained {} iterations in {:.2?}: objective {first:.4} -> {last:.4}",
        log.reports.len(),
        log.wall_time
    );
    outln!(
        "model_x checksum {:016x}, model_y checksum {:016x} -> {}",
        log.checksum_x,
        log.checksum_y,
        out.display()
    );
    Ok(())
}

pub fn encode(checkpoint: &Path, dataset: &Path, modality: Modality, out: &Path) -> Result<()> {
    let params = NetworkParams::load(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let codes = trainer::encode_dataset(&params, &ds, modality)?;

    let stem = dataset
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("codes");
    let path = out.join(format!("{stem}.{}.dsmb", modality.name()));
    fs::create_dir_all(out)?;
    codes.save(&path)?;

    outln!(
        "encoded {} items to {}-bit codes -> {}",
        codes.len(),
        codes.bits(),
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    query_codes: &Path,
    query_dataset: &Path,
    database_codes: &Path,
    database_dataset: &Path,
    task: RetrievalTask,
    ks: &[usize],
    out: &Path,
    dump_rankings: bool,
) -> Result<()> {
    let queries = BinaryCodes::load(query_codes)?;
    let database = BinaryCodes::load(database_codes)?;
    let query_ds = load_dataset(query_dataset)?;
    let db_ds = load_dataset(database_dataset)?;

    let report = retrieval::evaluate(
        &queries,
        query_ds.labels(),
        &database,
        db_ds.labels(),
        ks,
    )?;

    fs::create_dir_all(out)?;
    // The summary gains a leading row naming the retrieval direction, so a
    // directory of reports stays self-describing.
    let summary = report.summary_csv();
    let body = summary
        .strip_prefix("metric,value\n")
        .unwrap_or(summary.as_str());
    fs::write(
        out.join("report.csv"),
        format!("metric,value\ntask,{}\n{body}", task.name()),
    )?;
    fs::write(out.join("precision_at_k.csv"), report.p_at_k_csv())?;
    fs::write(out.join("precision_recall.csv"), report.pr_csv())?;
    if dump_rankings {
        let lists = retrieval::rank_all(&queries, &database)?;
        retrieval::write_rankings(&out.join("rankings.csv"), &lists)?;
    }

    outln!(
        "task={} map={:.6} over {} queries ({} without relevant items) -> {}",
        task.name(),
        report.map,
        report.queries,
        report.queries_without_relevant,
        out.display()
    );
    for &(k, p) in &report.p_at_k {
        outln!("precision@{k}={p:.6}");
    }
    Ok(())
}

pub fn gradcheck(
    loss: Option<LossName>,
    seed: u64,
    bits: Option<usize>,
    corrupt: bool,
) -> Result<()> {
    let sweep = match loss {
        Some(name) => vec![name],
        None => vec![
            LossName::L1,
            LossName::L2,
            LossName::Hinge,
            LossName::Contrastive,
        ],
    };

    let mut failures = 0usize;
    for name in sweep {
        let bits = bits.unwrap_or(4);
        let kind = match name {
            LossName::L1 => PairwiseLossKind::L1,
            LossName::L2 => PairwiseLossKind::L2,
            LossName::Hinge => PairwiseLossKind::hinge_default(),
            LossName::Contrastive => PairwiseLossKind::contrastive_for_bits(bits),
        };
        let mut cfg = GradcheckConfig::composite(kind, seed);
        cfg.bits = bits;
        cfg.corrupt = corrupt;
        let report = trainer::run_gradcheck(&cfg)?;
        let verdict = if report.pass { "PASS" } else { "FAIL" };
        outln!(
            "{verdict} loss={} max_rel_err={:.3e} params_checked={} resamples={}",
            name.as_str(),
            report.max_rel_err,
            report.params_checked,
            report.resamples
        );
        if !report.pass {
            failures += 1;
        }
    }

    if failures > 0 {
        return Err(Error::Numeric(format!(
            "gradient check failed for {failures} loss configuration(s)"
        )));
    }
    Ok(())
}
