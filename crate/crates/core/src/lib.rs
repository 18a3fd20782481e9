//! Constrained parameter-efficient fine-tuning at desk scale.
//!
//! Low-rank adapters, row-wise l1 projections, the trainable projected
//! gradient baseline, trainable-radius regulated adapters, SVD-scaled
//! adapter initialization, and a small hand-differentiated classifier and
//! synthetic domain-shift benchmark to exercise them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod largo;
pub mod linalg;
pub mod lora;
pub mod model;
pub mod projection;
pub mod tpgm;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Mat, NormMode, Rng, SvdFactors, SvdNormMode};
