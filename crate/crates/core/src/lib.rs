//! Two-stream multimodal hashing.
//!
//! This crate trains a pair of fully-connected networks, one per modality
//! (an image-feature side and a text-feature side), that map feature vectors
//! to relaxed codes in `(-1, 1)^L`. Quantizing the relaxed codes with `sign`
//! yields compact binary codes; retrieval then runs entirely in Hamming
//! space. Training couples the two networks through a pairwise loss on code
//! inner products, a per-modality classification head, a quantization
//! penalty pulling relaxed codes toward ±1, and a bit-balance penalty.
//!
//! Layout of the pieces:
//!
//! * [`numerics`]: dense row-major `f64` matrices, activations, Xavier init,
//!   and a central-finite-difference gradient oracle.
//! * [`model`]: network configuration, forward pass, checkpoints.
//! * [`objective`]: the pairwise losses and the auxiliary loss terms, each
//!   with its hand-derived gradient.
//! * [`trainer`]: pair sampling, backpropagation, SGD with per-layer rate
//!   multipliers, and a finite-difference gradient checker.
//! * [`codes`]: packed binary codes and Hamming distance.
//! * [`retrieval`]: linear-scan ranking, mAP / P\@K / PR-curve evaluation.
//! * [`data`]: multimodal datasets, synthetic generation, splits, file IO.
//!
//! All randomized behavior is seeded through ChaCha8, a counter-based stream
//! generator with a portable, documented output sequence, so runs are
//! bit-reproducible for a fixed seed. The `DSMHN_THREADS` environment
//! variable caps internal parallelism; results do not depend on the thread
//! count.

pub mod codes;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod parallel;
pub mod retrieval;
pub mod trainer;

mod wire;

pub use error::{Error, Result};
