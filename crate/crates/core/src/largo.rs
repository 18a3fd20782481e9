//! Low-rank adapters regulated by a pair of trainable radii.
//!
//! The effective weight is
//!
//! ```text
//! W = w0 + c · a·b,   c = γᵃγᵇ / (‖a‖₁ ‖b‖₁)
//! ```
//!
//! so under the entrywise norm the displacement `‖W − w0‖₁` never exceeds
//! `γᵃγᵇ` (submultiplicativity of the entrywise l1 norm). Rescaling either
//! factor by a positive constant leaves `W` unchanged; only the radii set the
//! size of the update.

use crate::error::{Error, Result};
use crate::linalg::{Mat, NormMode};
use crate::lora::{self, LoraAdapter};

/// Lower bound applied to both radii after every update.
pub const GAMMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaPair {
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_lr: f64,
}

impl GammaPair {
    pub fn new(gamma_a: f64, gamma_b: f64, gamma_lr: f64) -> Result<Self> {
        if !(gamma_a > 0.0 && gamma_b > 0.0) {
            return Err(Error::param(format!(
                "radii must be > 0, got ({gamma_a}, {gamma_b})"
            )));
        }
        if !(gamma_lr >= 0.0) {
            return Err(Error::param(format!("gamma_lr must be >= 0, got {gamma_lr}")));
        }
        Ok(GammaPair {
            gamma_a,
            gamma_b,
            gamma_lr,
        })
    }

    pub fn product(&self) -> f64 {
        self.gamma_a * self.gamma_b
    }
}

/// How factor gradients are formed from the effective-weight gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FactorGradMode {
    /// `c·g_w·bᵀ`, `c·aᵀ·g_w`: the regulated chain with `c` held fixed.
    #[default]
    Regulated,
    /// `g_w·bᵀ`, `aᵀ·g_w`: the unregulated LoRA gradients.
    Plain,
    /// Full derivative of the regulated composition, including the
    /// dependence of `c` on the factor norms.
    Exact,
}

impl FactorGradMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FactorGradMode::Regulated => "regulated",
            FactorGradMode::Plain => "plain",
            FactorGradMode::Exact => "exact",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LargoState {
    pub adapter: LoraAdapter,
    pub gammas: GammaPair,
    pub norm_mode: NormMode,
    pub clamp_shrink_only: bool,
}

impl LargoState {
    pub fn new(adapter: LoraAdapter, gammas: GammaPair) -> Self {
        LargoState {
            adapter,
            gammas,
            norm_mode: NormMode::Entrywise,
            clamp_shrink_only: false,
        }
    }

    pub fn with_norm_mode(mut self, mode: NormMode) -> Self {
        self.norm_mode = mode;
        self
    }

    pub fn with_clamp(mut self, clamp_shrink_only: bool) -> Self {
        self.clamp_shrink_only = clamp_shrink_only;
        self
    }

    fn factor_norms(&self) -> (f64, f64) {
        let na = self.norm_mode.norm(self.adapter.a()).unwrap_or(0.0);
        let nb = self.norm_mode.norm(self.adapter.b()).unwrap_or(0.0);
        (na, nb)
    }

    /// Scale before the optional shrink-only clamp; `None` for degenerate factors.
    fn raw_scale(&self) -> Option<f64> {
        let (na, nb) = self.factor_norms();
        let denom = na * nb;
        if denom > 0.0 && denom.is_finite() {
            Some(self.gammas.product() / denom)
        } else {
            None
        }
    }

    fn clamped(&self, raw: f64) -> bool {
        self.clamp_shrink_only && raw > 1.0
    }

    /// True when either factor has zero norm and the scale collapses to 0.
    pub fn is_degenerate(&self) -> bool {
        self.raw_scale().is_none()
    }

    pub fn trainable_params(&self) -> usize {
        self.adapter.trainable_params() + 2
    }
}

/// `c = γᵃγᵇ/(‖a‖₁‖b‖₁)`, zero for degenerate factors, capped at 1 when
/// `clamp_shrink_only` is set.
pub fn scale_factor(st: &LargoState) -> f64 {
    match st.raw_scale() {
        None => 0.0,
        Some(c) if st.clamped(c) => 1.0,
        Some(c) => c,
    }
}

/// `w0 + c·(a·b)`.
pub fn compose_regulated(st: &LargoState) -> Mat {
    let c = scale_factor(st);
    st.adapter
        .w0()
        .add_scaled(c, &st.adapter.delta())
        .expect("adapter invariants fix the shapes")
}

/// `compose_regulated(st) − w0`.
pub fn regulated_delta(st: &LargoState) -> Mat {
    st.adapter.delta().scale(scale_factor(st))
}

/// Gradients of the loss with respect to both radii.
pub fn gamma_grads(g_w: &Mat, st: &LargoState) -> Result<(f64, f64)> {
    check_grad_shape(g_w, st)?;
    let (na, nb) = st.factor_norms();
    let denom = na * nb;
    if !(denom > 0.0) {
        return Err(Error::numeric("radius gradient undefined for zero factor norm"));
    }
    if st.raw_scale().is_some_and(|c| st.clamped(c)) {
        return Ok((0.0, 0.0));
    }
    let inner = g_w.frobenius_inner(&st.adapter.delta())?;
    Ok((
        inner * st.gammas.gamma_b / denom,
        inner * st.gammas.gamma_a / denom,
    ))
}

/// `γ ← max(ε, γ − gamma_lr·dγ)` for both radii.
pub fn gamma_step(gp: &GammaPair, d_gamma_a: f64, d_gamma_b: f64) -> GammaPair {
    GammaPair {
        gamma_a: (gp.gamma_a - gp.gamma_lr * d_gamma_a).max(GAMMA_FLOOR),
        gamma_b: (gp.gamma_b - gp.gamma_lr * d_gamma_b).max(GAMMA_FLOOR),
        gamma_lr: gp.gamma_lr,
    }
}

fn check_grad_shape(g_w: &Mat, st: &LargoState) -> Result<()> {
    if g_w.shape() != st.adapter.w0().shape() {
        return Err(Error::dim(format!(
            "weight gradient {:?} does not match base {:?}",
            g_w.shape(),
            st.adapter.w0().shape()
        )));
    }
    Ok(())
}

/// Gradient of the chosen norm with respect to the entries of `m` (a.e.).
fn norm_gradient(m: &Mat, mode: NormMode) -> Mat {
    match mode {
        NormMode::Entrywise => m.map(sign),
        NormMode::MarsRowSum => {
            let mut best = (0, f64::NEG_INFINITY);
            for i in 0..m.rows() {
                let s: f64 = m.row(i).iter().map(|v| v.abs()).sum();
                if s > best.1 {
                    best = (i, s);
                }
            }
            Mat::from_fn(m.rows(), m.cols(), |i, j| if i == best.0 { sign(m.get(i, j)) } else { 0.0 })
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Factor gradients for an effective-weight gradient `g_w` taken at
/// `compose_regulated(st)`.
///
/// Degenerate states (a zero factor) fall back to the plain gradients since
/// the regulated map carries no signal there.
pub fn factor_grads(g_w: &Mat, st: &LargoState, mode: FactorGradMode) -> Result<(Mat, Mat)> {
    check_grad_shape(g_w, st)?;
    let (ga, gb) = lora::grad_factors(g_w, &st.adapter)?;
    let raw = match st.raw_scale() {
        None => return Ok((ga, gb)),
        Some(c) => c,
    };
    match mode {
        FactorGradMode::Plain => Ok((ga, gb)),
        FactorGradMode::Regulated => {
            let c = scale_factor(st);
            Ok((ga.scale(c), gb.scale(c)))
        }
        FactorGradMode::Exact => {
            if st.clamped(raw) {
                return Ok((ga, gb));
            }
            let (na, nb) = st.factor_norms();
            let inner = g_w.frobenius_inner(&st.adapter.delta())?;
            let da = ga
                .scale(raw)
                .add_scaled(-raw * inner / na, &norm_gradient(st.adapter.a(), st.norm_mode))?;
            let db = gb
                .scale(raw)
                .add_scaled(-raw * inner / nb, &norm_gradient(st.adapter.b(), st.norm_mode))?;
            Ok((da, db))
        }
    }
}

/// One SGD step on the factors; radii unchanged.
pub fn factor_step(
    st: &LargoState,
    g_w: &Mat,
    lr: f64,
    weight_decay: f64,
    mode: FactorGradMode,
) -> Result<LargoState> {
    let (da, db) = factor_grads(g_w, st, mode)?;
    let adapter = lora::sgd_step_factors(&st.adapter, &da, &db, lr, weight_decay)?;
    Ok(LargoState {
        adapter,
        ..st.clone()
    })
}

/// One radius step from a gradient taken at `compose_regulated(st)`.
/// Degenerate states are returned unchanged.
pub fn gamma_update(st: &LargoState, g_w: &Mat) -> Result<LargoState> {
    if st.is_degenerate() {
        check_grad_shape(g_w, st)?;
        return Ok(st.clone());
    }
    let (dga, dgb) = gamma_grads(g_w, st)?;
    Ok(LargoState {
        gammas: gamma_step(&st.gammas, dga, dgb),
        ..st.clone()
    })
}

/// Full iteration: factor step at the current composition, then a radius
/// step at the composition with the new factors.
pub fn largo_step<F>(st: &LargoState, grad_at: F, lr: f64, weight_decay: f64) -> Result<LargoState>
where
    F: FnMut(&Mat) -> Mat,
{
    largo_step_with(st, grad_at, lr, weight_decay, FactorGradMode::Regulated)
}

pub fn largo_step_with<F>(
    st: &LargoState,
    mut grad_at: F,
    lr: f64,
    weight_decay: f64,
    mode: FactorGradMode,
) -> Result<LargoState>
where
    F: FnMut(&Mat) -> Mat,
{
    let g_w = grad_at(&compose_regulated(st));
    let stepped = factor_step(st, &g_w, lr, weight_decay, mode)?;
    let g_w_new = grad_at(&compose_regulated(&stepped));
    gamma_update(&stepped, &g_w_new)
}
