//! Row-wise l1 distance constraints and their radial projections.
//!
//! A row `wᵢ` is feasible when `‖wᵢ − wᵢ⁽⁰⁾‖₁ ≤ γ`. Infeasible rows are pulled
//! back toward the anchor by rescaling the displacement, never by changing
//! its direction.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Projection radius in weight-space units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusSpec {
    gamma: f64,
}

impl RadiusSpec {
    pub fn new(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(RadiusSpec { gamma })
    }

    pub fn gamma(self) -> f64 {
        self.gamma
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && !gamma.is_nan() {
        Ok(())
    } else {
        Err(Error::param(format!("projection radius must be > 0, got {gamma}")))
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `‖w_row − w0_row‖₁ − γ`; nonpositive means feasible.
pub fn constraint_violation(w_row: &[f64], w0_row: &[f64], gamma: f64) -> Result<f64> {
    if w_row.len() != w0_row.len() {
        return Err(Error::dim(format!(
            "constraint_violation: row lengths {} and {}",
            w_row.len(),
            w0_row.len()
        )));
    }
    check_gamma(gamma)?;
    let dist: f64 = w_row.iter().zip(w0_row).map(|(a, b)| (a - b).abs()).sum();
    Ok(dist - gamma)
}

/// Multiplier applied to a row displacement of l1 norm `norm`.
///
/// Equals `1 / max(1, norm/γ)`; the boundary `norm == γ` is left unscaled.
#[inline]
pub fn row_scale(norm: f64, gamma: f64) -> f64 {
    if norm > gamma {
        gamma / norm
    } else {
        1.0
    }
}

/// `δ / max(1, ‖δ‖₁/γ)`.
pub fn project_row(delta_row: &[f64], gamma: f64) -> Vec<f64> {
    let s = row_scale(l1(delta_row), gamma);
    delta_row.iter().map(|x| s * x).collect()
}

/// Applies [`project_row`] to every row displacement of `w_hat` from `w0`.
pub fn project_mars(w0: &Mat, w_hat: &Mat, gamma: f64) -> Result<Mat> {
    Ok(project_mars_with_scales(w0, w_hat, gamma)?.0)
}

/// [`project_mars`] that also returns the per-row multipliers and row norms.
pub fn project_mars_with_scales(
    w0: &Mat,
    w_hat: &Mat,
    gamma: f64,
) -> Result<(Mat, Vec<RowProjection>)> {
    if w0.shape() != w_hat.shape() {
        return Err(Error::dim(format!(
            "project_mars: anchor {:?} vs weights {:?}",
            w0.shape(),
            w_hat.shape()
        )));
    }
    check_gamma(gamma)?;
    let mut out = w_hat.clone();
    let mut rows = Vec::with_capacity(w0.rows());
    for i in 0..w0.rows() {
        let anchor = w0.row(i);
        let target = out.row_mut(i);
        let norm: f64 = target.iter().zip(anchor).map(|(a, b)| (a - b).abs()).sum();
        let scale = row_scale(norm, gamma);
        if scale != 1.0 {
            for (t, &a) in target.iter_mut().zip(anchor) {
                *t = scale * (*t - a) + a;
            }
        }
        rows.push(RowProjection { norm, scale });
    }
    Ok((out, rows))
}

/// Per-row bookkeeping of a projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowProjection {
    /// l1 norm of the unprojected displacement.
    pub norm: f64,
    pub scale: f64,
}

impl RowProjection {
    pub fn active(&self) -> bool {
        self.scale != 1.0
    }
}
