//! Learnable softmax-gated feature scores trained jointly with a predictor,
//! with Shapley-value baselines and ranking metrics for comparing them.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense 2-D arrays and a define-by-run
//!   reverse-mode graph.
//! - [`scores`]: the score vector, its softmax weights, gating and rankings.
//! - [`datasets`]: seeded generators, CSV ingestion and splitting.
//! - [`model`]: MLP and attention predictors, optionally gated.
//! - [`train`]: full-batch Adam training with per-epoch records.
//! - [`explain`]: exact Shapley values, Kernel SHAP and ranking metrics.

pub mod autodiff;
pub mod commands;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod model;
pub mod scores;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
