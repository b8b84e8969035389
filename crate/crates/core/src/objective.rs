//! Loss terms and their hand-derived gradients.
//!
//! The training objective over a batch of sampled cross-modal pairs is
//!
//! ```text
//! O = sum_pairs loss(c_ij, s_ij)
//!   + alpha * (class_x + class_y)
//!   + beta  * quantization
//!   + gamma * balance
//! ```
//!
//! where `c_ij = <z_i, z_j> / L` is the normalized inner product of the two
//! relaxed codes and `s_ij` is the ±1 label similarity. The pairwise term is
//! a sum over the sampled pairs; the classification, quantization and
//! balance terms are normalized by the batch size. Every gradient here is
//! spelled out by hand and checked against central finite differences in the
//! tests; the trainer composes them into full backpropagation.
//!
//! Gradient conventions at kinks: `sign(0) = 0` inside subgradients (the
//! absolute-value loss and the quantization penalty), and indicator factors
//! `I(m > 0)` use a strict inequality, so hinge-style terms contribute
//! nothing exactly at their threshold.

use crate::codes::Similarity;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Probabilities are clamped to `[CE_CLAMP, 1 - CE_CLAMP]` inside the
/// cross-entropy so that saturated sigmoids cannot produce `log(0)`.
pub const CE_CLAMP: f64 = 1e-12;

/// The pairwise loss applied to each sampled cross-modal pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairwiseLossKind {
    /// `|c - s|`.
    L1,
    /// `(c - s)^2 / 2`.
    L2,
    /// Similar pairs pay `max(0, threshold - phi(c))`, dissimilar pairs pay
    /// `phi(c)`, with `phi(c) = (c + 1) / 2` mapping the inner product to
    /// `[0, 1]`.
    Hinge { threshold: f64 },
    /// With `d = ||z_i - z_j||^2` (squared Euclidean distance of the relaxed
    /// codes): similar pairs pay `d^2`, dissimilar pairs pay
    /// `max(0, margin - d)^2`. For exactly binary codes `d = 2L(1 - c)`.
    Contrastive { margin: f64 },
}

impl PairwiseLossKind {
    /// Hinge with the default threshold of 0.5.
    pub fn hinge_default() -> Self {
        PairwiseLossKind::Hinge { threshold: 0.5 }
    }

    /// Contrastive with the default margin `2L`, the expected squared
    /// distance between two independent uniform ±1 codes of length `bits`.
    pub fn contrastive_for_bits(bits: usize) -> Self {
        PairwiseLossKind::Contrastive {
            margin: 2.0 * bits as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PairwiseLossKind::L1 | PairwiseLossKind::L2 => Ok(()),
            PairwiseLossKind::Hinge { threshold } => {
                if threshold > 0.0 && threshold <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "hinge threshold must be in (0, 1], got {threshold}"
                    )))
                }
            }
            PairwiseLossKind::Contrastive { margin } => {
                if margin > 0.0 && margin.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "contrastive margin must be positive, got {margin}"
                    )))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PairwiseLossKind::L1 => "l1",
            PairwiseLossKind::L2 => "l2",
            PairwiseLossKind::Hinge { .. } => "hinge",
            PairwiseLossKind::Contrastive { .. } => "contrastive",
        }
    }
}

/// One sampled cross-modal pair: column `i` of the image-side batch against
/// column `j` of the text-side batch, with their label similarity.
#[derive(Clone, Copy, Debug)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub s: Similarity,
}

/// Normalized code inner product `<zi, zj> / L`. For relaxed codes in
/// `(-1, 1)^L` the value lies in `(-1, 1)`.
pub fn code_similarity(zi: &[f64], zj: &[f64]) -> Result<f64> {
    if zi.len() != zj.len() || zi.is_empty() {
        return Err(Error::Shape(format!(
            "code vectors of length {} and {} cannot be combined",
            zi.len(),
            zj.len()
        )));
    }
    let dot: f64 = zi.iter().zip(zj).map(|(&a, &b)| a * b).sum();
    Ok(dot / zi.len() as f64)
}

fn squared_distance(zi: &[f64], zj: &[f64]) -> f64 {
    zi.iter()
        .zip(zj)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum()
}

/// Subgradient convention for |x|: zero exactly at the kink.
fn subgrad_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn phi(c: f64) -> f64 {
    (c + 1.0) / 2.0
}

/// Pairwise loss for one pair of relaxed codes.
pub fn pairwise_loss(
    kind: PairwiseLossKind,
    zi: &[f64],
    zj: &[f64],
    s: Similarity,
) -> Result<f64> {
    kind.validate()?;
    Ok(match kind {
        PairwiseLossKind::L1 => (code_similarity(zi, zj)? - s.value()).abs(),
        PairwiseLossKind::L2 => {
            let diff = code_similarity(zi, zj)? - s.value();
            0.5 * diff * diff
        }
        PairwiseLossKind::Hinge { threshold } => {
            let p = phi(code_similarity(zi, zj)?);
            match s {
                Similarity::Similar => (threshold - p).max(0.0),
                Similarity::Dissimilar => p,
            }
        }
        PairwiseLossKind::Contrastive { margin } => {
            if zi.len() != zj.len() || zi.is_empty() {
                return Err(Error::Shape(format!(
                    "code vectors of length {} and {} cannot be combined",
                    zi.len(),
                    zj.len()
                )));
            }
            let d = squared_distance(zi, zj);
            match s {
                Similarity::Similar => d * d,
                Similarity::Dissimilar => {
                    let slack = (margin - d).max(0.0);
                    slack * slack
                }
            }
        }
    })
}

/// Gradients of `pairwise_loss` with respect to `zi` and `zj` (in that
/// order). Derivations, with `c = <zi, zj>/L`, `s' = (s+1)/2`:
///
/// * L1: `d|c-s|/dzi = sign(c-s) * zj / L`, `sign(0) = 0`.
/// * L2: `(c-s) * zj / L`.
/// * Hinge: `dP/dc = (-s' * I(threshold - phi(c) > 0) + (1 - s')) / 2`, and
///   `dc/dzi = zj / L`.
/// * Contrastive: with `d = ||zi - zj||^2`, `dd/dzi = 2(zi - zj)`, so the
///   gradient is `4 * (s'd - (1-s') I(margin - d > 0)(margin - d)) (zi - zj)`
///   for `zi` and its negation for `zj`.
pub fn pairwise_loss_grads(
    kind: PairwiseLossKind,
    zi: &[f64],
    zj: &[f64],
    s: Similarity,
) -> Result<(Vec<f64>, Vec<f64>)> {
    kind.validate()?;
    let l = zi.len() as f64;
    match kind {
        PairwiseLossKind::L1 => {
            let c = code_similarity(zi, zj)?;
            let k = subgrad_sign(c - s.value()) / l;
            Ok((scaled(zj, k), scaled(zi, k)))
        }
        PairwiseLossKind::L2 => {
            let c = code_similarity(zi, zj)?;
            let k = (c - s.value()) / l;
            Ok((scaled(zj, k), scaled(zi, k)))
        }
        PairwiseLossKind::Hinge { threshold } => {
            let c = code_similarity(zi, zj)?;
            let sp = s.indicator();
            let active = if threshold - phi(c) > 0.0 { 1.0 } else { 0.0 };
            let k = (-sp * active + (1.0 - sp)) / (2.0 * l);
            Ok((scaled(zj, k), scaled(zi, k)))
        }
        PairwiseLossKind::Contrastive { margin } => {
            if zi.len() != zj.len() || zi.is_empty() {
                return Err(Error::Shape(format!(
                    "code vectors of length {} and {} cannot be combined",
                    zi.len(),
                    zj.len()
                )));
            }
            let d = squared_distance(zi, zj);
            let sp = s.indicator();
            let active = if margin - d > 0.0 { 1.0 } else { 0.0 };
            let k = 4.0 * (sp * d - (1.0 - sp) * active * (margin - d));
            let gi: Vec<f64> = zi.iter().zip(zj).map(|(&a, &b)| k * (a - b)).collect();
            let gj: Vec<f64> = gi.iter().map(|&g| -g).collect();
            Ok((gi, gj))
        }
    }
}

fn scaled(v: &[f64], k: f64) -> Vec<f64> {
    v.iter().map(|&x| k * x).collect()
}

/// Multi-label sigmoid cross-entropy, averaged over the batch:
/// `-(1/n) * sum_i sum_c [g log p + (1-g) log(1-p)]` with probabilities
/// clamped away from 0 and 1. `probs` and `labels` are both `C x n`
/// (items in columns).
pub fn cross_entropy(probs: &Matrix, labels: &Matrix) -> Result<f64> {
    if probs.shape() != labels.shape() {
        return Err(Error::Shape(format!(
            "probs {}x{} vs labels {}x{}",
            probs.rows(),
            probs.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    let n = probs.cols() as f64;
    if probs.cols() == 0 {
        return Err(Error::Config("cross entropy over an empty batch".to_string()));
    }
    let mut acc = 0.0;
    for (&p, &g) in probs.data().iter().zip(labels.data()) {
        let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        acc += g * p.ln() + (1.0 - g) * (1.0 - p).ln();
    }
    Ok(-acc / n)
}

/// Gradient of `cross_entropy` with respect to the pre-activations of the
/// sigmoid layer: `(probs - labels) / n`. The sigmoid derivative cancels
/// against the cross-entropy exactly; no extra activation-derivative factor
/// appears (see `docs` for the finite-difference adjudication of the
/// alternative form).
pub fn cross_entropy_grad_preact(probs: &Matrix, labels: &Matrix) -> Result<Matrix> {
    if probs.shape() != labels.shape() {
        return Err(Error::Shape(format!(
            "probs {}x{} vs labels {}x{}",
            probs.rows(),
            probs.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    if probs.cols() == 0 {
        return Err(Error::Config("cross entropy over an empty batch".to_string()));
    }
    let n = probs.cols() as f64;
    probs.zip_map(labels, |p, g| (p - g) / n)
}

/// Quantization penalty pulling relaxed codes toward ±1:
/// `(1/2n) * (|| |Zx| - 1 ||_F^2 + || |Zy| - 1 ||_F^2)`.
pub fn quantization_loss(zx: &Matrix, zy: &Matrix) -> Result<f64> {
    if zx.cols() != zy.cols() || zx.cols() == 0 {
        return Err(Error::Shape(format!(
            "quantization loss needs equal nonzero batch sizes, got {} and {}",
            zx.cols(),
            zy.cols()
        )));
    }
    let n = zx.cols() as f64;
    let sq = |m: &Matrix| {
        m.data()
            .iter()
            .map(|&v| {
                let r = v.abs() - 1.0;
                r * r
            })
            .sum::<f64>()
    };
    Ok((sq(zx) + sq(zy)) / (2.0 * n))
}

/// Per-modality gradient of the quantization penalty:
/// `(1/n) * (|z| - 1) .* sign(z)` with `sign(0) = 0`.
pub fn quantization_grad(z: &Matrix) -> Matrix {
    let n = z.cols() as f64;
    z.map(|v| (v.abs() - 1.0) * subgrad_sign(v) / n)
}

/// Bit-balance penalty on row sums (each bit should split the batch evenly):
/// `(1/2n) * (||Zx * 1||^2 + ||Zy * 1||^2)`.
pub fn balance_loss(zx: &Matrix, zy: &Matrix) -> Result<f64> {
    if zx.cols() != zy.cols() || zx.cols() == 0 {
        return Err(Error::Shape(format!(
            "balance loss needs equal nonzero batch sizes, got {} and {}",
            zx.cols(),
            zy.cols()
        )));
    }
    let n = zx.cols() as f64;
    let sq = |m: &Matrix| m.row_sums().iter().map(|&r| r * r).sum::<f64>();
    Ok((sq(zx) + sq(zy)) / (2.0 * n))
}

/// Per-modality gradient of the balance penalty: every column equals
/// `(1/n) * (row sums of z)`.
pub fn balance_grad(z: &Matrix) -> Matrix {
    let n = z.cols() as f64;
    let sums = z.row_sums();
    Matrix::from_fn(z.rows(), z.cols(), |r, _| sums[r] / n)
}

/// Per-batch loss breakdown. `total` recombines the parts with the stored
/// weights exactly.
#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub pairwise: f64,
    pub class_x: f64,
    pub class_y: f64,
    pub quant: f64,
    pub balance: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub total: f64,
}

impl LossReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pairwise: f64,
        class_x: f64,
        class_y: f64,
        quant: f64,
        balance: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> LossReport {
        LossReport {
            pairwise,
            class_x,
            class_y,
            quant,
            balance,
            alpha,
            beta,
            gamma,
            total: pairwise + alpha * (class_x + class_y) + beta * quant + gamma * balance,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}
