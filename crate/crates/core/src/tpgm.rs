//! Trainable projected gradient baseline.
//!
//! Each iteration takes an SGD step on training data, projects it onto the
//! current l1 ball around the anchor, moves the radius along the validation
//! gradient of the projected weights, and re-projects with the new radius.

use crate::error::{Error, Result};
use crate::largo::GAMMA_FLOOR;
use crate::linalg::{svd_top_r, Mat};
use crate::lora::{self, LoraAdapter};
use crate::projection::{project_mars, project_mars_with_scales, RowProjection};

#[derive(Clone, Debug, PartialEq)]
pub struct TpgmState {
    pub w: Mat,
    pub w0: Mat,
    pub gamma: f64,
    pub gamma_lr: f64,
}

impl TpgmState {
    pub fn new(w: Mat, w0: Mat, gamma: f64, gamma_lr: f64) -> Result<Self> {
        if w.shape() != w0.shape() {
            return Err(Error::dim(format!(
                "weights {:?} vs anchor {:?}",
                w.shape(),
                w0.shape()
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::param(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(TpgmState {
            w,
            w0,
            gamma,
            gamma_lr,
        })
    }
}

/// Derivative of `loss(project_mars(w0, w_hat, γ))` with respect to `γ`,
/// given the loss gradient `g_val` at the projected point.
///
/// Only rows strictly outside the ball depend on `γ`:
/// `∂w̃ᵢ/∂γ = δᵢ/‖δᵢ‖₁`.
pub fn radius_gradient(w0: &Mat, w_hat: &Mat, rows: &[RowProjection], g_val: &Mat) -> Result<f64> {
    if g_val.shape() != w0.shape() {
        return Err(Error::dim(format!(
            "validation gradient {:?} vs weights {:?}",
            g_val.shape(),
            w0.shape()
        )));
    }
    let mut total = 0.0;
    for (i, rp) in rows.iter().enumerate() {
        if !rp.active() {
            continue;
        }
        let dot: f64 = g_val
            .row(i)
            .iter()
            .zip(w_hat.row(i).iter().zip(w0.row(i)))
            .map(|(g, (wh, a))| g * (wh - a))
            .sum();
        total += dot / rp.norm;
    }
    Ok(total)
}

/// `max(ε, γ − gamma_lr·dγ)`.
pub fn radius_step(gamma: f64, gamma_lr: f64, d_gamma: f64) -> f64 {
    (gamma - gamma_lr * d_gamma).max(GAMMA_FLOOR)
}

/// The bi-level step for a dense weight matrix.
pub fn tpgm_step<F>(st: &TpgmState, train_grad: &Mat, mut val_grad_at: F, lr: f64) -> Result<TpgmState>
where
    F: FnMut(&Mat) -> Mat,
{
    if !(lr > 0.0) {
        return Err(Error::param(format!("learning rate must be > 0, got {lr}")));
    }
    if train_grad.shape() != st.w.shape() {
        return Err(Error::dim(format!(
            "training gradient {:?} vs weights {:?}",
            train_grad.shape(),
            st.w.shape()
        )));
    }
    let w_hat = st.w.add_scaled(-lr, train_grad)?;
    let (w_tilde, rows) = project_mars_with_scales(&st.w0, &w_hat, st.gamma)?;
    let d_gamma = radius_gradient(&st.w0, &w_hat, &rows, &val_grad_at(&w_tilde))?;
    let gamma = radius_step(st.gamma, st.gamma_lr, d_gamma);
    let w = project_mars(&st.w0, &w_hat, gamma)?;
    Ok(TpgmState {
        w,
        w0: st.w0.clone(),
        gamma,
        gamma_lr: st.gamma_lr,
    })
}

/// The bi-level step applied to the low-rank delta of an adapter.
///
/// The factors take a plain SGD step; the materialized delta is projected
/// row-wise around `w0` and, if any row was shrunk, re-factored at the
/// adapter's rank with balanced singular factors `U√σ`, `√σVᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn tpgm_lora_step<F>(
    ad: &LoraAdapter,
    gamma: f64,
    gamma_lr: f64,
    train_grad: &Mat,
    mut val_grad_at: F,
    lr: f64,
    weight_decay: f64,
) -> Result<(LoraAdapter, f64)>
where
    F: FnMut(&Mat) -> Mat,
{
    let (da, db) = lora::grad_factors(train_grad, ad)?;
    let stepped = lora::sgd_step_factors(ad, &da, &db, lr, weight_decay)?;
    let w0 = stepped.w0();
    let w_hat = lora::compose_plain(&stepped);
    let (w_tilde, rows) = project_mars_with_scales(w0, &w_hat, gamma)?;
    let d_gamma = radius_gradient(w0, &w_hat, &rows, &val_grad_at(&w_tilde))?;
    let new_gamma = radius_step(gamma, gamma_lr, d_gamma);
    let (w_new, rows) = project_mars_with_scales(w0, &w_hat, new_gamma)?;
    Ok((refactor_projected(&stepped, &w_new, &rows)?, new_gamma))
}

/// Adapter whose product equals `w_projected − w0`.
///
/// When no row was shrunk the input adapter is returned as is; otherwise the
/// projected delta is re-factored at the adapter's rank.
pub fn refactor_projected(
    stepped: &LoraAdapter,
    w_projected: &Mat,
    rows: &[RowProjection],
) -> Result<LoraAdapter> {
    if rows.iter().all(|r| !r.active()) {
        return Ok(stepped.clone());
    }
    let delta = w_projected.sub(stepped.w0())?;
    let r = stepped.rank();
    let f = svd_top_r(&delta, r)?;
    let root: Vec<f64> = f.sigma_r.iter().map(|s| s.sqrt()).collect();
    let a = Mat::from_fn(f.u_r.rows(), r, |i, k| f.u_r.get(i, k) * root[k]);
    let b = Mat::from_fn(r, f.v_r_t.cols(), |k, j| root[k] * f.v_r_t.get(k, j));
    stepped.with_factors(a, b)
}
