//! `dsmhn`: train two-stream hashing networks and search in Hamming space.
//!
//! Subcommands cover the full pipeline: `synth` writes a paired dataset and
//! its splits, `train` fits both modality networks, `encode` turns features
//! into packed binary codes, `eval` scores retrieval, and `gradcheck`
//! compares every analytic gradient against finite differences.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 malformed or
//! unreadable data, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use dsmhn_core::Error;

use config::{LossName, Overrides, Preset};

#[derive(Parser)]
#[command(
    name = "dsmhn",
    version,
    about = "Two-stream multimodal hashing: synthesize, train, encode, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModalityName {
    X,
    Y,
}

impl ModalityName {
    fn to_core(self) -> dsmhn_core::trainer::Modality {
        match self {
            ModalityName::X => dsmhn_core::trainer::Modality::X,
            ModalityName::Y => dsmhn_core::trainer::Modality::Y,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskName {
    Ixt,
    Txi,
    Ixi,
}

impl TaskName {
    fn to_core(self) -> dsmhn_core::retrieval::RetrievalTask {
        use dsmhn_core::retrieval::RetrievalTask;
        match self {
            TaskName::Ixt => RetrievalTask::ImageQueryText,
            TaskName::Txi => RetrievalTask::TextQueryImage,
            TaskName::Ixi => RetrievalTask::ImageQueryImage,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paired dataset and write its splits
    Synth {
        /// TOML run configuration
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for dataset generation and splitting
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for dataset.dsmd, query.dsmd, database.dsmd, train.dsmd
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train both modality networks on a dataset
    Train {
        /// Training dataset (.dsmd, or .csv with a d_x,d_y,classes header)
        dataset: PathBuf,
        /// TOML run configuration
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for initialization and batch sampling
        #[arg(long)]
        seed: Option<u64>,
        /// Hyperparameter bundle; overrides the config file
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Hash code length in bits
        #[arg(long)]
        bits: Option<usize>,
        /// Pairwise loss
        #[arg(long, value_enum)]
        loss: Option<LossName>,
        /// Output directory for model_x.dsmp, model_y.dsmp, train_log.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Encode one modality of a dataset with a trained checkpoint
    Encode {
        /// Trained network checkpoint (.dsmp)
        checkpoint: PathBuf,
        /// Dataset to encode (.dsmd or .csv)
        dataset: PathBuf,
        /// Which modality's features to feed the network
        #[arg(long, value_enum)]
        modality: ModalityName,
        /// Output directory for <dataset-stem>.<modality>.dsmb
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate query codes against database codes
    Eval {
        /// Query codes (.dsmb)
        query_codes: PathBuf,
        /// Dataset supplying query labels (.dsmd or .csv)
        query_dataset: PathBuf,
        /// Database codes (.dsmb)
        database_codes: PathBuf,
        /// Dataset supplying database labels (.dsmd or .csv)
        database_dataset: PathBuf,
        /// Retrieval direction recorded in the report
        #[arg(long, value_enum)]
        task: TaskName,
        /// Cutoffs for precision at K, comma separated
        #[arg(long, value_delimiter = ',', default_value = "100")]
        k: Vec<usize>,
        /// Output directory for report.csv and the curve files
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write the full ranking of every query to rankings.csv
        #[arg(long)]
        dump_rankings: bool,
    },
    /// Compare analytic gradients against finite differences
    Gradcheck {
        /// Check a single loss instead of sweeping all four
        #[arg(long, value_enum)]
        loss: Option<LossName>,
        /// Seed for weights, features, labels, and pair draws
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Hash code length of the probe networks
        #[arg(long)]
        bits: Option<usize>,
        /// Test hook: corrupt one analytic entry, which must fail the check
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        Error::Shape(_) | Error::Format { .. } | Error::Parse { .. } | Error::Io(_) => 2,
    }
}

fn run(cli: Cli) -> dsmhn_core::Result<()> {
    match cli.command {
        Cmd::Synth { config, seed, out } => commands::synth(
            &Overrides {
                config,
                seed,
                ..Overrides::default()
            },
            &out,
        ),
        Cmd::Train {
            dataset,
            config,
            seed,
            preset,
            bits,
            loss,
            out,
        } => commands::train(
            &dataset,
            &Overrides {
                config,
                seed,
                preset,
                bits,
                loss,
            },
            &out,
        ),
        Cmd::Encode {
            checkpoint,
            dataset,
            modality,
            out,
        } => commands::encode(&checkpoint, &dataset, modality.to_core(), &out),
        Cmd::Eval {
            query_codes,
            query_dataset,
            database_codes,
            database_dataset,
            task,
            k,
            out,
            dump_rankings,
        } => commands::eval(
            &query_codes,
            &query_dataset,
            &database_codes,
            &database_dataset,
            task.to_core(),
            &k,
            &out,
            dump_rankings,
        ),
        Cmd::Gradcheck {
            loss,
            seed,
            bits,
            corrupt,
        } => commands::gradcheck(loss, seed, bits, corrupt),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; anything else is a
            // usage error.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };

    // Validate the thread cap before any work; the lazy pool would otherwise
    // silently fall back on a malformed value.
    if let Err(err) = dsmhn_core::parallel::threads_from_env() {
        eprintln!("dsmhn: {err}");
        std::process::exit(exit_code(&err));
    }

    if let Err(err) = run(cli) {
        eprintln!("dsmhn: {err}");
        std::process::exit(exit_code(&err));
    }
}
