//! Differentially private fine-tuning with robustness-oriented pre-training.
//!
//! The crate bundles a small reverse-mode autodiff engine, MLP models on
//! synthetic or IDX data, upstream pre-training (standard, vanilla SAM and the
//! decoupled-batch DPAdapter), a Rényi-DP accountant, four DP fine-tuning
//! algorithms, parameter-robustness metrics, numerical checks of the
//! convergence results, and an experiment harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod model;
pub mod pretrain;
pub mod privacy;
pub mod robustness;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
pub use model::ModelParams;
pub use tensor::Tensor;
