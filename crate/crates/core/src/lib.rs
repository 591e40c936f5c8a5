//! Separable and sparse graph-convolutional human pose forecasting.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every algorithmic
//! piece of the pipeline:
//!
//! - [`numerics`]: dense tensors, a define-by-run reverse-mode tape, ADAM.
//! - [`model`]: the GCN encoder variants (vanilla, space-time separable,
//!   depth-wise separable, sparse) and the temporal-convolution decoder.
//! - [`sparsify`]: teacher-student mask derivation and student construction.
//! - [`data`]: skeleton topology, motion sequences, windowing, splits and a
//!   synthetic forward-kinematics motion generator.
//! - [`metrics`]: MPJPE, the sequence loss, zero-velocity baseline, reports.
//! - [`collision`]: capsule geometry and forecast-based collision scoring.
//! - [`training`]: the mini-batch training loop.
//! - [`gradcheck`]: randomized finite-difference checks of every op kind.
//!
//! File formats, the CLI and wall-clock benchmarking live in the `sesgcn`
//! companion crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]
// Positivity checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod collision;
pub mod data;
mod error;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sparsify;
pub mod training;

pub use error::{Error, Result};
