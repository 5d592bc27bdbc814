//! White-box adversarial robustness evaluation for small convolutional
//! classifiers.
//!
//! The crate bundles everything needed to measure how a feed-forward CNN
//! behaves under norm-bounded, gradient-based input perturbations:
//!
//! - [`nn`] — a minimal differentiable inference engine (forward pass,
//!   cross-entropy, exact input and parameter gradients),
//! - [`preprocess`] — model-specific input transforms, their effect on
//!   perturbation magnitudes, and integer re-quantization,
//! - [`attack`] — FGSM/FGM, BIM, and PGD under L∞ and L2 budgets, plus a
//!   random-restart wrapper and named presets,
//! - [`eval`] — the evaluation protocol: clean/robust accuracy, confusion
//!   matrices, and misclassification spread,
//! - [`data`] — CIFAR-10 binary ingestion, synthetic datasets, and a
//!   bit-exact model file format,
//! - [`train`] — plain SGD-with-momentum training for desk-scale victims,
//! - [`config`] — the declarative run configuration consumed by the CLI.
//!
//! Start with the runnable examples (`cargo run --release -p advgrad
//! --example ...`); each one demonstrates a single capability end to end.

pub mod cli;
pub mod config;
pub mod element;
pub mod error;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod attack;
pub mod data;
pub mod eval;
pub mod train;

pub use element::{Dtype, Element};
pub use error::{Error, Result};
