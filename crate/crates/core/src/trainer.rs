//! Mini-batch pair sampling, backpropagation, and alternating SGD.
//!
//! Each iteration samples a batch of cross-modal pairs, forwards both
//! networks, updates the image network with the text network fixed, then
//! re-forwards the image network and updates the text network against the
//! refreshed trace. The logged loss reports always describe the batch as
//! seen before either update.
//!
//! The backward pass mirrors the objective exactly: the hash layer's delta
//! combines the accumulated pairwise gradients, the weighted quantization
//! and balance gradients, and the path down from the classification layer;
//! everything below follows the chain rule through each activation. The
//! gradcheck harness in this module compares those gradients against a
//! central finite-difference oracle over every parameter of both networks.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{Similarity, label_similarity};
use crate::data::MultimodalDataset;
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, NetworkConfig, NetworkParams, build_network, forward};
use crate::numerics::{Activation, Matrix, finite_diff_grad, rel_err};
use crate::objective::{
    LossReport, PairSample, PairwiseLossKind, balance_grad, balance_loss, code_similarity,
    cross_entropy, cross_entropy_grad_preact, pairwise_loss, pairwise_loss_grads,
    quantization_grad, quantization_loss,
};
use crate::wire;

/// Attempted draws per requested pair before sampling gives up on the
/// target polarity mix and takes whatever comes.
const SAMPLE_DRAW_CAP_PER_PAIR: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: PairwiseLossKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub positive_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::Config(format!(
                "positive pair fraction must be in [0, 1], got {}",
                self.positive_fraction
            )));
        }
        Ok(())
    }
}

/// Which network a backward pass or encoding step targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Modality {
    X,
    Y,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::X => "x",
            Modality::Y => "y",
        }
    }
}

/// Draw `n` cross-modal index pairs, steering toward `frac_pos` of them
/// being label-similar by rejection sampling. Returns the pairs and the
/// number that missed the target polarity after the draw cap was exhausted
/// (nonzero only on degenerate label distributions, e.g. a single class).
pub fn sample_pair_batch(
    ds: &MultimodalDataset,
    n: usize,
    frac_pos: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<PairSample>, usize)> {
    if ds.is_empty() {
        return Err(Error::Config("cannot sample pairs from an empty dataset".to_string()));
    }
    if n == 0 {
        return Err(Error::Config("pair batch size must be at least 1".to_string()));
    }
    if !(0.0..=1.0).contains(&frac_pos) {
        return Err(Error::Config(format!(
            "positive pair fraction must be in [0, 1], got {frac_pos}"
        )));
    }
    let target_pos = ((frac_pos * n as f64).round() as usize).min(n);
    let mut pos_left = target_pos;
    let mut neg_left = n - target_pos;
    let mut pairs = Vec::with_capacity(n);
    let mut draws = 0usize;
    let cap = SAMPLE_DRAW_CAP_PER_PAIR * n;
    while pairs.len() < n && draws < cap {
        draws += 1;
        let i = rng.random_range(0..ds.len());
        let j = rng.random_range(0..ds.len());
        let s = label_similarity(ds.label_row(i), ds.label_row(j))?;
        let slot = match s {
            Similarity::Similar => &mut pos_left,
            Similarity::Dissimilar => &mut neg_left,
        };
        if *slot > 0 {
            *slot -= 1;
            pairs.push(PairSample { i, j, s });
        }
    }
    let mut shortfall = 0;
    while pairs.len() < n {
        let i = rng.random_range(0..ds.len());
        let j = rng.random_range(0..ds.len());
        let s = label_similarity(ds.label_row(i), ds.label_row(j))?;
        let slot = match s {
            Similarity::Similar => &mut pos_left,
            Similarity::Dissimilar => &mut neg_left,
        };
        if *slot > 0 {
            *slot -= 1;
        } else {
            shortfall += 1;
        }
        pairs.push(PairSample { i, j, s });
    }
    Ok((pairs, shortfall))
}

/// One assembled mini-batch: column `k` of `x` holds the image features of
/// pair `k`'s first item, column `k` of `y` the text features of its second
/// item, and `pairs` is rewritten to reference those columns. The label
/// blocks follow the same column order, one per modality because the two
/// sides of a pair are different items.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub x: Matrix,
    pub y: Matrix,
    pub labels_x: Matrix,
    pub labels_y: Matrix,
    pub pairs: Vec<PairSample>,
}

pub fn assemble_batch(ds: &MultimodalDataset, sampled: &[PairSample]) -> Result<TrainBatch> {
    for p in sampled {
        if p.i >= ds.len() || p.j >= ds.len() {
            return Err(Error::Shape(format!(
                "pair ({}, {}) out of range for {} items",
                p.i,
                p.j,
                ds.len()
            )));
        }
    }
    let b = sampled.len();
    Ok(TrainBatch {
        x: Matrix::from_fn(ds.d_x(), b, |r, k| ds.x().get(sampled[k].i, r)),
        y: Matrix::from_fn(ds.d_y(), b, |r, k| ds.y().get(sampled[k].j, r)),
        labels_x: Matrix::from_fn(ds.classes(), b, |r, k| ds.labels().get(sampled[k].i, r)),
        labels_y: Matrix::from_fn(ds.classes(), b, |r, k| ds.labels().get(sampled[k].j, r)),
        pairs: sampled
            .iter()
            .enumerate()
            .map(|(k, p)| PairSample { i: k, j: k, s: p.s })
            .collect(),
    })
}

/// Full objective value on one batch, broken into its terms. The pairwise
/// term sums over `batch.pairs`; the other terms average over the batch.
pub fn batch_objective(
    trace_x: &ForwardTrace,
    trace_y: &ForwardTrace,
    batch: &TrainBatch,
    tc: &TrainConfig,
) -> Result<LossReport> {
    let zx = trace_x.relaxed_codes();
    let zy = trace_y.relaxed_codes();
    let mut pairwise = 0.0;
    for p in &batch.pairs {
        pairwise += pairwise_loss(tc.loss, &zx.col_to_vec(p.i), &zy.col_to_vec(p.j), p.s)?;
    }
    let class_x = cross_entropy(trace_x.class_probs(), &batch.labels_x)?;
    let class_y = cross_entropy(trace_y.class_probs(), &batch.labels_y)?;
    let quant = quantization_loss(zx, zy)?;
    let balance = balance_loss(zx, zy)?;
    Ok(LossReport::new(
        pairwise, class_x, class_y, quant, balance, tc.alpha, tc.beta, tc.gamma,
    ))
}

/// Per-layer deltas ξ for one network: the objective's gradient with
/// respect to each layer's pre-activation, shaped `out_dim x batch`.
#[derive(Clone, Debug)]
pub struct BackpropDeltas {
    pub xi: Vec<Matrix>,
}

/// Per-layer parameter gradients for one network.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

fn check_trace(params: &NetworkParams, trace: &ForwardTrace, what: &str) -> Result<()> {
    if trace.input().rows() != params.config().input_dim() {
        return Err(Error::Shape(format!(
            "{what} trace has {} input features but the network expects {}",
            trace.input().rows(),
            params.config().input_dim()
        )));
    }
    for m in 0..params.layer_count() {
        if trace.preact(m).rows() != params.weight(m).rows() {
            return Err(Error::Shape(format!(
                "{what} trace layer {m} has {} rows but the network has {}",
                trace.preact(m).rows(),
                params.weight(m).rows()
            )));
        }
    }
    Ok(())
}

/// Backward pass for one modality. `params` are the target network's
/// current parameters (the ones `trace_x`/`trace_y`'s target side came
/// from); the other modality's trace contributes values only.
pub fn backward(
    params: &NetworkParams,
    trace_x: &ForwardTrace,
    trace_y: &ForwardTrace,
    batch: &TrainBatch,
    tc: &TrainConfig,
    target: Modality,
) -> Result<Gradients> {
    tc.validate()?;
    let n = trace_x.batch_size();
    if trace_y.batch_size() != n || n == 0 {
        return Err(Error::Shape(format!(
            "batch sizes disagree: {} image columns vs {} text columns",
            n,
            trace_y.batch_size()
        )));
    }
    let (trace_t, labels_t) = match target {
        Modality::X => (trace_x, &batch.labels_x),
        Modality::Y => (trace_y, &batch.labels_y),
    };
    check_trace(params, trace_t, target.name())?;
    let zx = trace_x.relaxed_codes();
    let zy = trace_y.relaxed_codes();
    if zx.rows() != zy.rows() {
        return Err(Error::Shape(format!(
            "code lengths disagree: {} vs {}",
            zx.rows(),
            zy.rows()
        )));
    }
    for p in &batch.pairs {
        if p.i >= n || p.j >= n {
            return Err(Error::Shape(format!(
                "pair ({}, {}) out of range for batch size {n}",
                p.i, p.j
            )));
        }
    }
    let layers = params.layer_count();
    let z_t = trace_t.relaxed_codes();

    // Classification delta at the top, scaled by alpha.
    let xi_top = cross_entropy_grad_preact(trace_t.class_probs(), labels_t)?.scale(tc.alpha);

    // Pairwise gradients accumulate into the batch columns they touch.
    let mut pair_grad = Matrix::zeros(z_t.rows(), n);
    for p in &batch.pairs {
        let zi = zx.col_to_vec(p.i);
        let zj = zy.col_to_vec(p.j);
        let (gi, gj) = pairwise_loss_grads(tc.loss, &zi, &zj, p.s)?;
        match target {
            Modality::X => pair_grad.add_to_col(p.i, &gi),
            Modality::Y => pair_grad.add_to_col(p.j, &gj),
        }
    }

    // Hash-layer delta: pairwise + penalties + the path through the
    // classification layer, all through tanh'.
    let hash_pre = trace_t.preact(layers - 2);
    let d = pair_grad
        .add(&quantization_grad(z_t).scale(tc.beta))?
        .add(&balance_grad(z_t).scale(tc.gamma))?
        .add(&params.weight(layers - 1).transpose().matmul(&xi_top)?)?;
    let xi_hash = d.zip_map(&Activation::Tanh.derivative_matrix(hash_pre), |a, b| a * b)?;

    let mut xi = vec![Matrix::zeros(0, 0); layers];
    xi[layers - 1] = xi_top;
    xi[layers - 2] = xi_hash;
    for m in (0..layers.saturating_sub(2)).rev() {
        let back = params.weight(m + 1).transpose().matmul(&xi[m + 1])?;
        let act = params.config().layers[m].activation;
        xi[m] = back.zip_map(&act.derivative_matrix(trace_t.preact(m)), |a, b| a * b)?;
    }
    let deltas = BackpropDeltas { xi };

    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for m in 0..layers {
        weights.push(deltas.xi[m].matmul(&trace_t.input_of(m).transpose())?);
        biases.push(deltas.xi[m].row_sums());
    }
    Ok(Gradients { weights, biases })
}

/// One SGD step in place: `W -= lr * multiplier(m) * dW`, likewise biases.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, tc: &TrainConfig) -> Result<()> {
    if grads.weights.len() != params.layer_count() {
        return Err(Error::Shape(format!(
            "gradients cover {} layers but the network has {}",
            grads.weights.len(),
            params.layer_count()
        )));
    }
    for m in 0..params.layer_count() {
        if grads.weights[m].shape() != params.weight(m).shape()
            || grads.biases[m].len() != params.bias(m).len()
        {
            return Err(Error::Shape(format!("gradient shape mismatch at layer {m}")));
        }
        if !grads.weights[m].all_finite() || !grads.biases[m].iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {m}")));
        }
        let step = tc.learning_rate * params.config().layers[m].lr_multiplier;
        let updated = params.weight(m).zip_map(&grads.weights[m], |w, g| w - step * g)?;
        *params.weight_mut(m) = updated;
        let bias = params.bias_mut(m);
        for (b, g) in bias.iter_mut().zip(&grads.biases[m]) {
            *b -= step * g;
        }
    }
    Ok(())
}

/// Everything a finished run reports besides the parameters themselves.
#[derive(Clone, Debug)]
pub struct TrainLog {
    pub reports: Vec<LossReport>,
    pub wall_time: Duration,
    pub checksum_x: u64,
    pub checksum_y: u64,
    /// Pairs that missed the target polarity mix across all iterations.
    pub sampling_shortfalls: usize,
}

/// Run the full training loop. All randomness (initialization and pair
/// sampling) comes from `rng`, so a seeded rng makes the run deterministic.
pub fn train(
    ds: &MultimodalDataset,
    cfg_x: &NetworkConfig,
    cfg_y: &NetworkConfig,
    tc: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(NetworkParams, NetworkParams, TrainLog)> {
    tc.validate()?;
    if ds.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".to_string()));
    }
    for (cfg, dim, name) in [(cfg_x, ds.d_x(), "image"), (cfg_y, ds.d_y(), "text")] {
        if cfg.input_dim() != dim {
            return Err(Error::Shape(format!(
                "{name} network expects {} features but the dataset has {dim}",
                cfg.input_dim()
            )));
        }
        if cfg.classes() != ds.classes() {
            return Err(Error::Shape(format!(
                "{name} network has {} classes but the dataset has {}",
                cfg.classes(),
                ds.classes()
            )));
        }
    }
    if cfg_x.bits() != cfg_y.bits() {
        return Err(Error::Shape(format!(
            "code lengths disagree: image {} vs text {}",
            cfg_x.bits(),
            cfg_y.bits()
        )));
    }
    let start = Instant::now();
    let mut params_x = build_network(cfg_x, rng)?;
    let mut params_y = build_network(cfg_y, rng)?;
    let mut reports = Vec::with_capacity(tc.iterations);
    let mut shortfalls = 0;
    for iter in 0..tc.iterations {
        let (sampled, shortfall) =
            sample_pair_batch(ds, tc.batch_size, tc.positive_fraction, rng)?;
        shortfalls += shortfall;
        let batch = assemble_batch(ds, &sampled)?;
        let mut trace_x = forward(&params_x, &batch.x)?;
        let trace_y = forward(&params_y, &batch.y)?;
        reports.push(batch_objective(&trace_x, &trace_y, &batch, tc)?);

        let with_iter = |e: Error| match e {
            Error::Numeric(msg) => Error::Numeric(format!("{msg} at iteration {iter}")),
            other => other,
        };
        let grads_x = backward(&params_x, &trace_x, &trace_y, &batch, tc, Modality::X)?;
        sgd_step(&mut params_x, &grads_x, tc).map_err(with_iter)?;
        trace_x = forward(&params_x, &batch.x)?;
        let grads_y = backward(&params_y, &trace_x, &trace_y, &batch, tc, Modality::Y)?;
        sgd_step(&mut params_y, &grads_y, tc).map_err(with_iter)?;
    }
    let log = TrainLog {
        reports,
        wall_time: start.elapsed(),
        checksum_x: params_x.checksum(),
        checksum_y: params_y.checksum(),
        sampling_shortfalls: shortfalls,
    };
    Ok((params_x, params_y, log))
}

/// Forward one modality of a whole dataset through its network and quantize
/// the hash layer's outputs. Chunked so memory stays proportional to the
/// chunk, not the dataset; chunking cannot change the codes because forward
/// passes are column-independent.
pub fn encode_dataset(
    params: &NetworkParams,
    ds: &MultimodalDataset,
    modality: Modality,
) -> Result<crate::codes::BinaryCodes> {
    use crate::codes::BinaryCodes;
    let features = match modality {
        Modality::X => ds.x(),
        Modality::Y => ds.y(),
    };
    if features.cols() != params.config().input_dim() {
        return Err(Error::Shape(format!(
            "{} features have dimension {} but the network expects {}",
            modality.name(),
            features.cols(),
            params.config().input_dim()
        )));
    }
    if ds.is_empty() {
        return Err(Error::Config("cannot encode an empty dataset".to_string()));
    }
    const CHUNK: usize = 1024;
    let bits = params.config().bits();
    let mut words = Vec::new();
    let mut start = 0;
    while start < ds.len() {
        let end = (start + CHUNK).min(ds.len());
        let input = Matrix::from_fn(features.cols(), end - start, |r, k| {
            features.get(start + k, r)
        });
        let trace = forward(params, &input)?;
        let chunk = BinaryCodes::quantize(trace.relaxed_codes());
        words.extend_from_slice(chunk.words());
        start = end;
    }
    BinaryCodes::from_words(bits, ds.len(), words)
}

/// Write the per-iteration loss table as CSV, preceded by `#`-prefixed
/// header lines. Timing is deliberately excluded so identical runs produce
/// identical files.
pub fn write_train_log(path: &Path, reports: &[LossReport], header: &[String]) -> Result<()> {
    let mut out = String::new();
    for line in header {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("iteration,pairwise,class_x,class_y,quant,balance,total\n");
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{}\n",
            r.pairwise, r.class_x, r.class_y, r.quant, r.balance, r.total
        ));
    }
    wire::write_atomic(path, out.as_bytes())
}

/// Setup for one gradient check: tiny networks, a random batch, random
/// pairs, and the finite-difference step and tolerance.
#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub loss: PairwiseLossKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d_x: usize,
    pub d_y: usize,
    pub hidden: Vec<usize>,
    pub bits: usize,
    pub classes: usize,
    pub batch: usize,
    pub pairs: usize,
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Test hook: corrupt one analytic gradient entry so the harness must
    /// report a failure.
    pub corrupt: bool,
}

impl GradcheckConfig {
    /// Composite objective on tiny networks.
    pub fn composite(loss: PairwiseLossKind, seed: u64) -> GradcheckConfig {
        GradcheckConfig {
            loss,
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.5,
            d_x: 6,
            d_y: 5,
            hidden: vec![7, 6],
            bits: 4,
            classes: 3,
            batch: 4,
            pairs: 4,
            h: 1e-5,
            tolerance: 1e-4,
            seed,
            corrupt: false,
        }
    }

    /// Pairwise term only (alpha = beta = gamma = 0).
    pub fn pairwise_only(loss: PairwiseLossKind, seed: u64) -> GradcheckConfig {
        GradcheckConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..GradcheckConfig::composite(loss, seed)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub params_checked: usize,
    /// Setups discarded for sitting too close to a gradient kink.
    pub resamples: usize,
    pub pass: bool,
}

fn flatten_params(params: &NetworkParams) -> Vec<f64> {
    let mut theta = Vec::new();
    for m in 0..params.layer_count() {
        theta.extend_from_slice(params.weight(m).data());
        theta.extend_from_slice(params.bias(m));
    }
    theta
}

fn unflatten_params(template: &NetworkParams, theta: &[f64]) -> NetworkParams {
    let mut params = template.clone();
    let mut o = 0;
    for m in 0..params.layer_count() {
        let (rows, cols) = params.weight(m).shape();
        *params.weight_mut(m) =
            Matrix::from_vec(rows, cols, theta[o..o + rows * cols].to_vec()).unwrap();
        o += rows * cols;
        let len = params.bias(m).len();
        params.bias_mut(m).copy_from_slice(&theta[o..o + len]);
        o += len;
    }
    assert_eq!(o, theta.len());
    params
}

fn flatten_grads(grads: &Gradients) -> Vec<f64> {
    let mut flat = Vec::new();
    for (w, b) in grads.weights.iter().zip(&grads.biases) {
        flat.extend_from_slice(w.data());
        flat.extend_from_slice(b);
    }
    flat
}

/// Margin to the nearest gradient kink of the whole objective at the
/// current point; the harness resamples while this is below `floor`.
fn objective_kink_margin(
    tc: &TrainConfig,
    trace_x: &ForwardTrace,
    trace_y: &ForwardTrace,
    batch: &TrainBatch,
) -> f64 {
    let mut margin = f64::INFINITY;
    let zx = trace_x.relaxed_codes();
    let zy = trace_y.relaxed_codes();
    for p in &batch.pairs {
        let zi = zx.col_to_vec(p.i);
        let zj = zy.col_to_vec(p.j);
        let c = code_similarity(&zi, &zj).unwrap();
        match tc.loss {
            PairwiseLossKind::L1 => margin = margin.min((c - p.s.value()).abs()),
            PairwiseLossKind::L2 => {}
            PairwiseLossKind::Hinge { threshold } => {
                margin = margin.min((threshold - (c + 1.0) / 2.0).abs());
            }
            PairwiseLossKind::Contrastive { margin: m } => {
                let d: f64 = zi.iter().zip(&zj).map(|(&a, &b)| (a - b) * (a - b)).sum();
                margin = margin.min((m - d).abs());
            }
        }
    }
    if tc.beta > 0.0 {
        for trace in [trace_x, trace_y] {
            for &v in trace.relaxed_codes().data() {
                margin = margin.min(v.abs());
            }
        }
    }
    margin
}

fn relu_kink_margin(params: &NetworkParams, trace: &ForwardTrace) -> f64 {
    let mut margin = f64::INFINITY;
    for (m, layer) in params.config().layers.iter().enumerate() {
        if layer.activation == Activation::Relu {
            for &v in trace.preact(m).data() {
                margin = margin.min(v.abs());
            }
        }
    }
    margin
}

/// Compare backpropagation against central finite differences over every
/// weight and bias of both networks on one random setup. Setups too close
/// to a kink of the objective are resampled (new derived seed) up to 50
/// times.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let tc = TrainConfig {
        loss: cfg.loss,
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
        learning_rate: 1.0,
        batch_size: cfg.batch.max(2),
        iterations: 1,
        positive_fraction: 0.5,
        seed: cfg.seed,
    };
    tc.validate()?;
    if cfg.batch == 0 || cfg.bits == 0 || cfg.classes == 0 {
        return Err(Error::Config("gradcheck dimensions must be positive".to_string()));
    }
    let cfg_x = NetworkConfig::feedforward(cfg.d_x, &cfg.hidden, cfg.bits, cfg.classes);
    let cfg_y = NetworkConfig::feedforward(cfg.d_y, &cfg.hidden, cfg.bits, cfg.classes);

    const KINK_FLOOR: f64 = 1e-3;
    const MAX_ATTEMPTS: usize = 50;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt as u64 * 0x9e37));
        let params_x = build_network(&cfg_x, &mut rng)?;
        let params_y = build_network(&cfg_y, &mut rng)?;
        let x = Matrix::from_fn(cfg.d_x, cfg.batch, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(cfg.d_y, cfg.batch, |_, _| rng.random_range(-1.0..1.0));
        let bit = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { 0.0 };
        let labels_x = Matrix::from_fn(cfg.classes, cfg.batch, |_, _| bit(&mut rng));
        let labels_y = Matrix::from_fn(cfg.classes, cfg.batch, |_, _| bit(&mut rng));
        let pairs: Vec<PairSample> = (0..cfg.pairs)
            .map(|_| PairSample {
                i: rng.random_range(0..cfg.batch),
                j: rng.random_range(0..cfg.batch),
                s: if rng.random::<bool>() {
                    Similarity::Similar
                } else {
                    Similarity::Dissimilar
                },
            })
            .collect();
        let batch = TrainBatch { x, y, labels_x, labels_y, pairs };

        let trace_x = forward(&params_x, &batch.x)?;
        let trace_y = forward(&params_y, &batch.y)?;
        let margin = objective_kink_margin(&tc, &trace_x, &trace_y, &batch)
            .min(relu_kink_margin(&params_x, &trace_x))
            .min(relu_kink_margin(&params_y, &trace_y));
        if margin < KINK_FLOOR {
            continue;
        }

        let gx = backward(&params_x, &trace_x, &trace_y, &batch, &tc, Modality::X)?;
        let gy = backward(&params_y, &trace_x, &trace_y, &batch, &tc, Modality::Y)?;
        let mut analytic = flatten_grads(&gx);
        analytic.extend(flatten_grads(&gy));
        if cfg.corrupt {
            analytic[0] += 1.0;
        }

        let theta_x = flatten_params(&params_x);
        let theta_y = flatten_params(&params_y);
        let split = theta_x.len();
        let mut theta = theta_x;
        theta.extend(theta_y);

        let objective = |t: &[f64]| -> f64 {
            let px = unflatten_params(&params_x, &t[..split]);
            let py = unflatten_params(&params_y, &t[split..]);
            let tx = forward(&px, &batch.x).unwrap();
            let ty = forward(&py, &batch.y).unwrap();
            batch_objective(&tx, &ty, &batch, &tc).unwrap().total
        };
        let numeric = finite_diff_grad(objective, &theta, cfg.h)?;

        let mut max_err = 0.0_f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            max_err = max_err.max(rel_err(*a, *n));
        }
        return Ok(GradcheckReport {
            max_rel_err: max_err,
            params_checked: theta.len(),
            resamples: attempt,
            pass: max_err < cfg.tolerance,
        });
    }
    Err(Error::Numeric(format!(
        "no kink-free gradcheck setup found in {MAX_ATTEMPTS} attempts"
    )))
}
