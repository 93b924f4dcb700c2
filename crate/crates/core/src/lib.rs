//! Boosting graph neural networks by sequential knowledge distillation.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense/sparse arithmetic, a define-by-run autodiff tape, Adam.
//! - [`graph`]: graph containers, TU and JSON-bundle loaders, synthetic
//!   generators, adjacency normalization, splits, sampling, batching.
//! - [`models`]: GCN, GraphSage and GAT encoders with sum-pool readout.
//! - [`distill`]: soft cross-entropy distillation loss, per-sample adaptive
//!   temperature, and a closed-form gradient reference.
//! - [`boosting`]: SAMME.R sample-weight updates and the weighted label loss.
//! - [`pipeline`]: supervised training, distillation steps, sequential runs,
//!   baselines and evaluation.
//! - [`analysis`]: linear CKA between per-layer representations.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod boosting;
pub mod distill;
pub mod error;
pub mod graph;
pub mod models;
pub mod pipeline;
pub mod seeding;
pub mod tensor;

pub use error::{BgnnError, Result};
