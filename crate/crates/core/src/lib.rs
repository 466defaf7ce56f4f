//! Certified robustness to word-substitution perturbations for neural
//! text classifiers, via interval bound propagation (IBP).
//!
//! The crate provides:
//!
//! - [`interval`]: interval tensors and exact elementary bound rules
//!   (affine, monotonic, multiplication corners, stable log-softmax).
//! - [`graph`]: a dual-track computation graph that evaluates concrete
//!   values and interval bounds together, with reverse-mode gradients
//!   flowing through both tracks.
//! - [`lexicon`]: vocabularies, substitution neighborhoods, per-position
//!   allowed sets, language-model filtering, and dataset generation.
//! - [`embed`]: word-vector storage, the learned input transform, input
//!   boxes over substitution sets, and epsilon shrinking.
//! - [`models`]: bag-of-words, CNN, LSTM, and decomposable-attention
//!   classifiers assembled from graph ops, with loss bounds and
//!   certification.
//! - [`train`]: standard, data-augmentation, and certifiably robust
//!   training with epsilon/kappa schedules.
//! - [`eval`]: certified accuracy, a genetic substitution attack,
//!   exhaustive enumeration on small instances, and diagnostics.
//! - [`checkpoint`]: bitwise round-tripping parameter checkpoints.

pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod interval;
pub mod lexicon;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
