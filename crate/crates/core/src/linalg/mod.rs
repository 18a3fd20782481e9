//! Dense matrix arithmetic, matrix norms, truncated SVD and seeded randomness.

mod mat;
mod rng;
mod svd;

pub use mat::{l1_entrywise, matmul, matmul_nt, matmul_tn, max_abs_row_sum, Mat};
pub use rng::{rand_normal, Rng};
pub use svd::{svd_top_r, SvdFactors, MAX_SWEEPS, OFF_DIAGONAL_TOL};

use crate::error::Result;

/// Which matrix norm stands in for `‖X‖₁`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// Sum of absolute entries.
    #[default]
    Entrywise,
    /// Maximum absolute row sum.
    MarsRowSum,
}

impl NormMode {
    pub fn norm(self, m: &Mat) -> Result<f64> {
        match self {
            NormMode::Entrywise => l1_entrywise(m),
            NormMode::MarsRowSum => max_abs_row_sum(m),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Entrywise => "entrywise",
            NormMode::MarsRowSum => "mars_row_sum",
        }
    }
}

/// Which norm of the singular-value block is used by the SVD initializer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SvdNormMode {
    /// Euclidean norm of the singular-value vector.
    #[default]
    VectorL2,
    /// Largest singular value.
    Spectral,
}

impl SvdNormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SvdNormMode::VectorL2 => "vector_l2",
            SvdNormMode::Spectral => "spectral",
        }
    }
}
