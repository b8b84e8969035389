//! Hamming-space retrieval and its evaluation metrics.
//!
//! Retrieval is a linear popcount scan: every database item is ranked by
//! Hamming distance to the query, ties broken by ascending database index
//! so results are deterministic. Relevance ground truth is sharing at least
//! one label, the same signal that supervises training.
//!
//! Metrics: average precision over the full ranked list, mean average
//! precision excluding (but counting) queries with no relevant item, top-K
//! precision averaged over all queries, and the 11-point interpolated
//! precision-recall curve averaged over queries that have relevant items.

use std::path::Path;

use rayon::prelude::*;

use crate::codes::{BinaryCodes, Similarity, label_similarity};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::parallel;
use crate::wire;

/// Which code sets a cross-modal evaluation pairs up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetrievalTask {
    ImageQueryText,
    TextQueryImage,
    ImageQueryImage,
}

impl RetrievalTask {
    pub fn parse(s: &str) -> Result<RetrievalTask> {
        match s {
            "ixt" => Ok(RetrievalTask::ImageQueryText),
            "txi" => Ok(RetrievalTask::TextQueryImage),
            "ixi" => Ok(RetrievalTask::ImageQueryImage),
            other => Err(Error::Config(format!(
                "unknown task {other:?}, expected ixt, txi or ixi"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RetrievalTask::ImageQueryText => "ixt",
            RetrievalTask::TextQueryImage => "txi",
            RetrievalTask::ImageQueryImage => "ixi",
        }
    }

    /// Modalities (query side, database side) this task encodes with.
    pub fn sides(self) -> (crate::trainer::Modality, crate::trainer::Modality) {
        use crate::trainer::Modality;
        match self {
            RetrievalTask::ImageQueryText => (Modality::X, Modality::Y),
            RetrievalTask::TextQueryImage => (Modality::Y, Modality::X),
            RetrievalTask::ImageQueryImage => (Modality::X, Modality::X),
        }
    }
}

/// One query's full ranking: database indices by ascending Hamming
/// distance, ties by ascending index, with the distances alongside.
#[derive(Clone, Debug)]
pub struct RankedList {
    pub query: usize,
    pub order: Vec<usize>,
    pub distances: Vec<u32>,
}

/// Rank the whole database against query item `q`.
pub fn rank(queries: &BinaryCodes, q: usize, database: &BinaryCodes) -> Result<RankedList> {
    if q >= queries.len() {
        return Err(Error::Shape(format!(
            "query index {q} out of range for {} queries",
            queries.len()
        )));
    }
    let mut keyed: Vec<(u32, usize)> = Vec::with_capacity(database.len());
    for j in 0..database.len() {
        keyed.push((queries.hamming(q, database, j)?, j));
    }
    keyed.sort_unstable();
    let (distances, order) = keyed.into_iter().unzip();
    Ok(RankedList { query: q, order, distances })
}

/// Rank every query, in parallel, results in query order.
pub fn rank_all(queries: &BinaryCodes, database: &BinaryCodes) -> Result<Vec<RankedList>> {
    if queries.is_empty() || database.is_empty() {
        return Err(Error::Config(
            "retrieval needs nonempty query and database code sets".to_string(),
        ));
    }
    if queries.bits() != database.bits() {
        return Err(Error::Shape(format!(
            "code lengths disagree: queries {} vs database {}",
            queries.bits(),
            database.bits()
        )));
    }
    parallel::pool().install(|| {
        (0..queries.len())
            .into_par_iter()
            .map(|q| rank(queries, q, database))
            .collect()
    })
}

/// Average precision of one ranked 0/1 relevance list, over the full list.
/// Returns the AP and the number of relevant items; with zero relevant
/// items the AP is 0 and the caller decides how to account for the query.
pub fn average_precision(rel: &[bool]) -> (f64, usize) {
    assert!(!rel.is_empty(), "average precision of an empty ranking");
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 { (0.0, 0) } else { (acc / hits as f64, hits) }
}

/// The 11 standard recall levels 0.0, 0.1, …, 1.0.
pub const PR_LEVELS: usize = 11;

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub map: f64,
    /// `(K, mean precision at K)` per requested K, over all queries.
    pub p_at_k: Vec<(usize, f64)>,
    /// `(recall level, mean interpolated precision)` at the 11 standard
    /// levels, over queries with at least one relevant item.
    pub pr_curve: Vec<(f64, f64)>,
    pub queries: usize,
    /// Queries with no relevant database item; excluded from `map` and the
    /// PR curve.
    pub queries_without_relevant: usize,
}

struct QueryStats {
    ap: f64,
    relevant: usize,
    hits_at_k: Vec<usize>,
    interp_prec: Option<[f64; PR_LEVELS]>,
}

fn query_stats(
    queries: &BinaryCodes,
    query_labels: &Matrix,
    database: &BinaryCodes,
    db_labels: &Matrix,
    ks: &[usize],
    q: usize,
) -> Result<QueryStats> {
    let ranked = rank(queries, q, database)?;
    let ql = query_labels.row(q);
    let rel: Vec<bool> = ranked
        .order
        .iter()
        .map(|&j| Ok(label_similarity(ql, db_labels.row(j))? == Similarity::Similar))
        .collect::<Result<_>>()?;
    let (ap, relevant) = average_precision(&rel);
    let hits_at_k = ks
        .iter()
        .map(|&k| rel.iter().take(k).filter(|&&r| r).count())
        .collect();
    let interp_prec = (relevant > 0).then(|| {
        // Precision at every cutoff, then a suffix max so each recall level
        // gets the best precision achievable at or beyond it.
        let n = rel.len();
        let mut prec = vec![0.0; n];
        let mut recall = vec![0.0; n];
        let mut hits = 0usize;
        for i in 0..n {
            if rel[i] {
                hits += 1;
            }
            prec[i] = hits as f64 / (i + 1) as f64;
            recall[i] = hits as f64 / relevant as f64;
        }
        let mut best = vec![0.0; n];
        let mut running = 0.0_f64;
        for i in (0..n).rev() {
            running = running.max(prec[i]);
            best[i] = running;
        }
        let mut points = [0.0; PR_LEVELS];
        for (l, point) in points.iter_mut().enumerate() {
            let t = l as f64 / 10.0;
            // recall is nondecreasing and reaches 1.0, so a cutoff exists.
            let i = recall.partition_point(|&r| r < t);
            *point = best[i.min(n - 1)];
        }
        points
    });
    Ok(QueryStats { ap, relevant, hits_at_k, interp_prec })
}

/// Evaluate a query code set against a database code set. Relevance is
/// sharing at least one label.
pub fn evaluate(
    queries: &BinaryCodes,
    query_labels: &Matrix,
    database: &BinaryCodes,
    db_labels: &Matrix,
    ks: &[usize],
) -> Result<EvalReport> {
    if queries.is_empty() || database.is_empty() {
        return Err(Error::Config(
            "evaluation needs nonempty query and database code sets".to_string(),
        ));
    }
    if queries.bits() != database.bits() {
        return Err(Error::Shape(format!(
            "code lengths disagree: queries {} vs database {}",
            queries.bits(),
            database.bits()
        )));
    }
    if query_labels.rows() != queries.len() || db_labels.rows() != database.len() {
        return Err(Error::Shape(format!(
            "label rows ({}, {}) do not match code counts ({}, {})",
            query_labels.rows(),
            db_labels.rows(),
            queries.len(),
            database.len()
        )));
    }
    if query_labels.cols() != db_labels.cols() {
        return Err(Error::Shape(format!(
            "label dimensions disagree: queries {} vs database {}",
            query_labels.cols(),
            db_labels.cols()
        )));
    }
    for &k in ks {
        if k == 0 {
            return Err(Error::Config("top-K precision needs K >= 1".to_string()));
        }
    }

    let stats: Vec<QueryStats> = parallel::pool().install(|| {
        (0..queries.len())
            .into_par_iter()
            .map(|q| query_stats(queries, query_labels, database, db_labels, ks, q))
            .collect::<Result<_>>()
    })?;

    let with_relevant = stats.iter().filter(|s| s.relevant > 0).count();
    let map = if with_relevant == 0 {
        0.0
    } else {
        stats.iter().map(|s| s.ap).sum::<f64>() / with_relevant as f64
    };
    let p_at_k = ks
        .iter()
        .enumerate()
        .map(|(idx, &k)| {
            let mean = stats
                .iter()
                .map(|s| s.hits_at_k[idx] as f64 / k as f64)
                .sum::<f64>()
                / stats.len() as f64;
            (k, mean)
        })
        .collect();
    let pr_curve = (0..PR_LEVELS)
        .map(|l| {
            let t = l as f64 / 10.0;
            let mean = if with_relevant == 0 {
                0.0
            } else {
                stats
                    .iter()
                    .filter_map(|s| s.interp_prec.as_ref().map(|p| p[l]))
                    .sum::<f64>()
                    / with_relevant as f64
            };
            (t, mean)
        })
        .collect();
    Ok(EvalReport {
        map,
        p_at_k,
        pr_curve,
        queries: queries.len(),
        queries_without_relevant: queries.len() - with_relevant,
    })
}

impl EvalReport {
    /// Key-value summary: metric name, value per line.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("map,{}\n", self.map));
        out.push_str(&format!("queries,{}\n", self.queries));
        out.push_str(&format!(
            "queries_without_relevant,{}\n",
            self.queries_without_relevant
        ));
        out
    }

    pub fn p_at_k_csv(&self) -> String {
        let mut out = String::from("k,precision\n");
        for &(k, p) in &self.p_at_k {
            out.push_str(&format!("{k},{p}\n"));
        }
        out
    }

    pub fn pr_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for &(r, p) in &self.pr_curve {
            out.push_str(&format!("{r},{p}\n"));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        wire::write_atomic(&dir.join("report.csv"), self.summary_csv().as_bytes())?;
        wire::write_atomic(&dir.join("precision_at_k.csv"), self.p_at_k_csv().as_bytes())?;
        wire::write_atomic(&dir.join("precision_recall.csv"), self.pr_csv().as_bytes())
    }
}

/// Dump full rankings as CSV rows `query,rank,db_index,distance`.
pub fn write_rankings(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut out = String::from("query,rank,db_index,distance\n");
    for list in lists {
        for (r, (&j, &d)) in list.order.iter().zip(&list.distances).enumerate() {
            out.push_str(&format!("{},{r},{j},{d}\n", list.query));
        }
    }
    wire::write_atomic(path, out.as_bytes())
}
