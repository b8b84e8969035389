//! Fully connected two-stream networks and their checkpoint format.
//!
//! Each modality gets its own stack of dense layers. The last two layers are
//! fixed by convention: a tanh layer whose width is the code length (its
//! outputs are the relaxed codes) and a sigmoid layer whose width is the
//! number of classes (its outputs are per-class probabilities). Everything
//! below those is an arbitrary chain of hidden layers.
//!
//! Checkpoints store only dimensions and parameters; activations are
//! reconstructed from the same convention on load, so a file is readable
//! without any side channel.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, xavier_init};
use crate::wire::{self, CountingReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSMP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Per-layer learning-rate multiplier applied on top of the base rate.
    pub lr_multiplier: f64,
}

/// Architecture of one modality network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    /// Hidden layers are ReLU; the hash layer (width `bits`, tanh) and the
    /// classification layer (width `classes`, sigmoid) are appended on top.
    /// All learning-rate multipliers start at 1.
    pub fn feedforward(input_dim: usize, hidden: &[usize], bits: usize, classes: usize) -> NetworkConfig {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        let mut layers = Vec::with_capacity(hidden.len() + 2);
        for w in dims.windows(2) {
            layers.push(LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: Activation::Relu,
                lr_multiplier: 1.0,
            });
        }
        layers.push(LayerSpec {
            in_dim: *dims.last().unwrap(),
            out_dim: bits,
            activation: Activation::Tanh,
            lr_multiplier: 1.0,
        });
        layers.push(LayerSpec {
            in_dim: bits,
            out_dim: classes,
            activation: Activation::Sigmoid,
            lr_multiplier: 1.0,
        });
        NetworkConfig { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least a hash and a classification layer, got {} layers",
                self.layers.len()
            )));
        }
        for (m, layer) in self.layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(Error::Config(format!(
                    "layer {m} has a zero dimension ({}x{})",
                    layer.out_dim, layer.in_dim
                )));
            }
            if !(layer.lr_multiplier.is_finite() && layer.lr_multiplier > 0.0) {
                return Err(Error::Config(format!(
                    "layer {m} learning-rate multiplier must be positive, got {}",
                    layer.lr_multiplier
                )));
            }
            if m > 0 && layer.in_dim != self.layers[m - 1].out_dim {
                return Err(Error::Config(format!(
                    "layer {m} expects {} inputs but layer {} produces {}",
                    layer.in_dim,
                    m - 1,
                    self.layers[m - 1].out_dim
                )));
            }
        }
        let m = self.layers.len();
        if self.layers[m - 2].activation != Activation::Tanh {
            return Err(Error::Config(format!(
                "the hash layer must use tanh, got {}",
                self.layers[m - 2].activation.name()
            )));
        }
        if self.layers[m - 1].activation != Activation::Sigmoid {
            return Err(Error::Config(format!(
                "the classification layer must use sigmoid, got {}",
                self.layers[m - 1].activation.name()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Code length: the width of the tanh hash layer.
    pub fn bits(&self) -> usize {
        self.layers[self.layers.len() - 2].out_dim
    }

    /// Label dimension: the width of the sigmoid classification layer.
    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }
}

/// Default architectures for both modalities: two 512-wide hidden layers
/// each, and the learning-rate multipliers `[1, 1, 1000, 100]` boosting the
/// hash and classification layers.
pub fn default_configs(
    d_x: usize,
    d_y: usize,
    bits: usize,
    classes: usize,
) -> (NetworkConfig, NetworkConfig) {
    let mut x = NetworkConfig::feedforward(d_x, &[512, 512], bits, classes);
    let mut y = NetworkConfig::feedforward(d_y, &[512, 512], bits, classes);
    for cfg in [&mut x, &mut y] {
        let m = cfg.layers.len();
        cfg.layers[m - 2].lr_multiplier = 1000.0;
        cfg.layers[m - 1].lr_multiplier = 100.0;
    }
    (x, y)
}

/// Weights and biases of one modality network. `weights[m]` is
/// `out_dim x in_dim`; inputs are column vectors, so a layer computes
/// `activation(W z + c)`.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    config: NetworkConfig,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Xavier-uniform weights, zero biases.
pub fn build_network(config: &NetworkConfig, rng: &mut impl Rng) -> Result<NetworkParams> {
    config.validate()?;
    let mut weights = Vec::with_capacity(config.layers.len());
    let mut biases = Vec::with_capacity(config.layers.len());
    for layer in &config.layers {
        weights.push(xavier_init(layer.out_dim, layer.in_dim, rng)?);
        biases.push(vec![0.0; layer.out_dim]);
    }
    Ok(NetworkParams {
        config: config.clone(),
        weights,
        biases,
    })
}

impl NetworkParams {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, m: usize) -> &Matrix {
        &self.weights[m]
    }

    pub fn bias(&self, m: usize) -> &[f64] {
        &self.biases[m]
    }

    pub fn weight_mut(&mut self, m: usize) -> &mut Matrix {
        &mut self.weights[m]
    }

    pub fn bias_mut(&mut self, m: usize) -> &mut Vec<f64> {
        &mut self.biases[m]
    }

    /// Checkpoint encoding: magic, version, layer count, then per layer its
    /// dimensions, the row-major weight matrix and the bias vector.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        wire::push_u32(&mut out, CHECKPOINT_VERSION);
        wire::push_u32(&mut out, self.weights.len() as u32);
        for (m, w) in self.weights.iter().enumerate() {
            wire::push_u32(&mut out, w.cols() as u32);
            wire::push_u32(&mut out, w.rows() as u32);
            for &v in w.data() {
                wire::push_f64(&mut out, v);
            }
            for &v in &self.biases[m] {
                wire::push_f64(&mut out, v);
            }
        }
        out
    }

    /// FNV-1a over the checkpoint encoding; equal checksums mean bitwise
    /// identical parameters.
    pub fn checksum(&self) -> u64 {
        wire::fnv1a64(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        wire::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<NetworkParams> {
        let file = File::open(path)?;
        let mut r = CountingReader::new(BufReader::new(file));
        let params = Self::read(&mut r)?;
        r.expect_eof()?;
        Ok(params)
    }

    fn read<R: std::io::Read>(r: &mut CountingReader<R>) -> Result<NetworkParams> {
        r.read_magic(CHECKPOINT_MAGIC)?;
        let version = r.read_u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.bad(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let count = r.read_u32()? as usize;
        if count < 2 {
            return Err(r.bad(format!("checkpoint has {count} layers, need at least 2")));
        }
        let mut dims = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        let mut biases = Vec::with_capacity(count);
        for _ in 0..count {
            let in_dim = r.read_u32()? as usize;
            let out_dim = r.read_u32()? as usize;
            if in_dim == 0 || out_dim == 0 {
                return Err(r.bad(format!("layer with a zero dimension ({out_dim}x{in_dim})")));
            }
            let mut data = Vec::with_capacity(out_dim * in_dim);
            for _ in 0..out_dim * in_dim {
                let v = r.read_f64()?;
                if !v.is_finite() {
                    return Err(r.bad("non-finite weight"));
                }
                data.push(v);
            }
            let weight = Matrix::from_vec(out_dim, in_dim, data)
                .map_err(|e| r.bad(e.to_string()))?;
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                let v = r.read_f64()?;
                if !v.is_finite() {
                    return Err(r.bad("non-finite bias"));
                }
                bias.push(v);
            }
            dims.push((in_dim, out_dim));
            weights.push(weight);
            biases.push(bias);
        }
        let config = infer_config(&dims).map_err(|e| r.bad(e.to_string()))?;
        Ok(NetworkParams {
            config,
            weights,
            biases,
        })
    }
}

/// Reconstruct a config from layer dimensions using the file convention:
/// ReLU hidden layers, then tanh, then sigmoid. Multipliers are not stored
/// and come back as 1; they only matter during training.
pub fn infer_config(dims: &[(usize, usize)]) -> Result<NetworkConfig> {
    if dims.len() < 2 {
        return Err(Error::Format {
            offset: 0,
            message: format!("checkpoint has {} layers, need at least 2", dims.len()),
        });
    }
    let layers = dims
        .iter()
        .enumerate()
        .map(|(m, &(in_dim, out_dim))| LayerSpec {
            in_dim,
            out_dim,
            activation: if m + 1 == dims.len() {
                Activation::Sigmoid
            } else if m + 2 == dims.len() {
                Activation::Tanh
            } else {
                Activation::Relu
            },
            lr_multiplier: 1.0,
        })
        .collect();
    let config = NetworkConfig { layers };
    config.validate()?;
    Ok(config)
}

/// Everything the backward pass needs from one forward pass: the input,
/// every pre-activation and every layer output, items in columns.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Matrix,
    preacts: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.cols()
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Pre-activation of layer `m` (`W z + c` before the nonlinearity).
    pub fn preact(&self, m: usize) -> &Matrix {
        &self.preacts[m]
    }

    /// Output of layer `m` after its activation.
    pub fn output(&self, m: usize) -> &Matrix {
        &self.outputs[m]
    }

    /// Input seen by layer `m` (the previous layer's output, or the batch).
    pub fn input_of(&self, m: usize) -> &Matrix {
        if m == 0 { &self.input } else { &self.outputs[m - 1] }
    }

    /// Relaxed codes: the tanh hash layer's output, `bits x batch`.
    pub fn relaxed_codes(&self) -> &Matrix {
        &self.outputs[self.outputs.len() - 2]
    }

    /// Class probabilities: the sigmoid layer's output, `classes x batch`.
    pub fn class_probs(&self) -> &Matrix {
        &self.outputs[self.outputs.len() - 1]
    }
}

/// Forward pass over a batch (items in columns). Column `k` of every stored
/// matrix corresponds to column `k` of the input.
pub fn forward(params: &NetworkParams, input: &Matrix) -> Result<ForwardTrace> {
    if input.rows() != params.config.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features but the network expects {}",
            input.rows(),
            params.config.input_dim()
        )));
    }
    let mut preacts = Vec::with_capacity(params.layer_count());
    let mut outputs = Vec::with_capacity(params.layer_count());
    let mut z = input.clone();
    for m in 0..params.layer_count() {
        let pre = params.weights[m]
            .matmul(&z)?
            .add_col_broadcast(&params.biases[m])?;
        z = params.config.layers[m].activation.apply_matrix(&pre);
        preacts.push(pre);
        outputs.push(z.clone());
    }
    Ok(ForwardTrace {
        input: input.clone(),
        preacts,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig::feedforward(5, &[7], 4, 3)
    }

    fn tiny_net(seed: u64) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_network(&tiny_config(), &mut rng).unwrap()
    }

    #[test]
    fn feedforward_config_chains_and_activations() {
        let cfg = NetworkConfig::feedforward(10, &[8, 6], 4, 3);
        cfg.validate().unwrap();
        assert_eq!(cfg.layers.len(), 4);
        assert_eq!(cfg.input_dim(), 10);
        assert_eq!(cfg.bits(), 4);
        assert_eq!(cfg.classes(), 3);
        let acts: Vec<_> = cfg.layers.iter().map(|l| l.activation).collect();
        assert_eq!(
            acts,
            vec![Activation::Relu, Activation::Relu, Activation::Tanh, Activation::Sigmoid]
        );
        let dims: Vec<_> = cfg.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect();
        assert_eq!(dims, vec![(10, 8), (8, 6), (6, 4), (4, 3)]);
    }

    #[test]
    fn default_configs_pin_hidden_widths_and_multipliers() {
        let (x, y) = default_configs(64, 32, 16, 4);
        for cfg in [&x, &y] {
            cfg.validate().unwrap();
            let mults: Vec<_> = cfg.layers.iter().map(|l| l.lr_multiplier).collect();
            assert_eq!(mults, vec![1.0, 1.0, 1000.0, 100.0]);
            assert_eq!(cfg.layers[0].out_dim, 512);
            assert_eq!(cfg.layers[1].out_dim, 512);
        }
        assert_eq!(x.input_dim(), 64);
        assert_eq!(y.input_dim(), 32);
    }

    #[test]
    fn validation_rejects_broken_configs() {
        let mut cfg = tiny_config();
        cfg.layers[1].in_dim = 9;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("expects 9 inputs"), "{err}");

        let mut cfg = tiny_config();
        cfg.layers[1].activation = Activation::Relu; // hash layer must be tanh
        assert!(cfg.validate().unwrap_err().to_string().contains("tanh"));

        let mut cfg = tiny_config();
        let m = cfg.layers.len();
        cfg.layers[m - 1].activation = Activation::Tanh;
        assert!(cfg.validate().unwrap_err().to_string().contains("sigmoid"));

        let cfg = NetworkConfig { layers: vec![tiny_config().layers[0]] };
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.layers[0].lr_multiplier = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = tiny_net(7);
        let b = tiny_net(7);
        let c = tiny_net(8);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        for m in 0..a.layer_count() {
            assert!(a.bias(m).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_matches_hand_computation() {
        // One tanh layer and one sigmoid layer with hand-set weights.
        let config = NetworkConfig {
            layers: vec![
                LayerSpec { in_dim: 2, out_dim: 2, activation: Activation::Tanh, lr_multiplier: 1.0 },
                LayerSpec { in_dim: 2, out_dim: 1, activation: Activation::Sigmoid, lr_multiplier: 1.0 },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = build_network(&config, &mut rng).unwrap();
        *params.weight_mut(0) = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        *params.bias_mut(0) = vec![0.5, 0.0];
        *params.weight_mut(1) = Matrix::from_vec(1, 2, vec![2.0, 1.0]).unwrap();
        *params.bias_mut(1) = vec![-1.0];

        let input = Matrix::from_vec(2, 1, vec![0.25, -0.5]).unwrap();
        let trace = forward(&params, &input).unwrap();
        let h0 = (0.25_f64 + 0.5).tanh();
        let h1 = 0.5_f64.tanh();
        assert_eq!(trace.relaxed_codes().col_to_vec(0), vec![h0, h1]);
        let a = 2.0 * h0 + h1 - 1.0;
        let p = 1.0 / (1.0 + (-a).exp());
        assert!((trace.class_probs().get(0, 0) - p).abs() < 1e-15);
        assert_eq!(trace.preact(0).col_to_vec(0), vec![0.75, 0.5]);
    }

    #[test]
    fn forward_columns_are_batch_invariant() {
        // Running items one at a time or as a batch gives bitwise identical
        // columns; the trainer relies on this when it re-forwards.
        let params = tiny_net(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = Matrix::from_fn(5, 6, |_, _| rng.random_range(-1.0..1.0));
        let full = forward(&params, &batch).unwrap();
        for k in 0..batch.cols() {
            let single = Matrix::from_vec(5, 1, batch.col_to_vec(k)).unwrap();
            let one = forward(&params, &single).unwrap();
            for m in 0..params.layer_count() {
                assert_eq!(one.output(m).col_to_vec(0), full.output(m).col_to_vec(k));
                assert_eq!(one.preact(m).col_to_vec(0), full.preact(m).col_to_vec(k));
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let params = tiny_net(1);
        let input = Matrix::zeros(4, 2);
        let err = forward(&params, &input).unwrap_err().to_string();
        assert!(err.contains("4 features") && err.contains("expects 5"), "{err}");
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.dsmp");
        let params = tiny_net(21);
        params.save(&path).unwrap();
        let loaded = NetworkParams::load(&path).unwrap();
        assert_eq!(loaded.to_bytes(), params.to_bytes());
        assert_eq!(loaded.checksum(), params.checksum());
        assert_eq!(loaded.config(), params.config());
        // A forward pass through the loaded network is bitwise identical.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let input = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = forward(&params, &input).unwrap();
        let b = forward(&loaded, &input).unwrap();
        assert_eq!(a.class_probs().data(), b.class_probs().data());
    }

    #[test]
    fn load_rejects_bad_magic_version_and_truncation() {
        let dir = tempdir().unwrap();
        let params = tiny_net(31);
        let bytes = params.to_bytes();

        let path = dir.path().join("magic.dsmp");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        let err = NetworkParams::load(&path).unwrap_err().to_string();
        assert!(err.contains("DSMP"), "{err}");

        let path = dir.path().join("version.dsmp");
        let mut bad = bytes.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        let err = NetworkParams::load(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");

        let path = dir.path().join("short.dsmp");
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match NetworkParams::load(&path).unwrap_err() {
            Error::Format { offset, .. } => {
                // The last f64 starts 8 bytes before the end of the file.
                assert_eq!(offset, bytes.len() as u64 - 8);
            }
            other => panic!("expected a format error, got {other}"),
        }

        let path = dir.path().join("long.dsmp");
        let mut bad = bytes.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        let err = NetworkParams::load(&path).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn infer_config_applies_the_activation_convention() {
        let cfg = infer_config(&[(10, 8), (8, 4), (4, 3)]).unwrap();
        let acts: Vec<_> = cfg.layers.iter().map(|l| l.activation).collect();
        assert_eq!(acts, vec![Activation::Relu, Activation::Tanh, Activation::Sigmoid]);
        // Exactly two layers: tanh straight into sigmoid.
        let cfg = infer_config(&[(10, 4), (4, 3)]).unwrap();
        let acts: Vec<_> = cfg.layers.iter().map(|l| l.activation).collect();
        assert_eq!(acts, vec![Activation::Tanh, Activation::Sigmoid]);
        assert!(infer_config(&[(10, 4)]).is_err());
    }

    #[test]
    fn bias_broadcast_reaches_every_column() {
        let config = NetworkConfig {
            layers: vec![
                LayerSpec { in_dim: 3, out_dim: 2, activation: Activation::Tanh, lr_multiplier: 1.0 },
                LayerSpec { in_dim: 2, out_dim: 1, activation: Activation::Sigmoid, lr_multiplier: 1.0 },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = build_network(&config, &mut rng).unwrap();
        *params.weight_mut(0) = Matrix::zeros(2, 3);
        *params.bias_mut(0) = vec![0.3, -0.7];
        let input = Matrix::from_fn(3, 4, |r, c| (r * c) as f64);
        let trace = forward(&params, &input).unwrap();
        for k in 0..4 {
            assert_eq!(
                trace.relaxed_codes().col_to_vec(k),
                vec![0.3_f64.tanh(), (-0.7_f64).tanh()]
            );
        }
    }
}
