//! Low-rank adapters over a frozen base weight.
//!
//! The effective weight of a plain adapter is `w0 + a·b`, with `a` of shape
//! `n x r` and `b` of shape `r x d`. Training steps return new adapters and
//! never touch `w0`.

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, rand_normal, svd_top_r, Mat, Rng, SvdNormMode};

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    w0: Mat,
    a: Mat,
    b: Mat,
}

impl LoraAdapter {
    pub fn new(w0: Mat, a: Mat, b: Mat) -> Result<Self> {
        let (n, d) = w0.shape();
        let r = a.cols();
        if a.rows() != n || b.cols() != d || b.rows() != r {
            return Err(Error::dim(format!(
                "adapter factors {:?} and {:?} do not fit base {n}x{d}",
                a.shape(),
                b.shape()
            )));
        }
        if r > n.min(d) {
            return Err(Error::dim(format!("rank {r} exceeds min({n}, {d})")));
        }
        Ok(LoraAdapter { w0, a, b })
    }

    /// Adapter with Kaiming-initialized `a` and zero `b`.
    pub fn kaiming(w0: Mat, rank: usize, rng: &mut Rng) -> Result<Self> {
        let (a, b) = init_kaiming(w0.rows(), w0.cols(), rank, rng)?;
        LoraAdapter::new(w0, a, b)
    }

    /// Adapter initialized from the leading singular factors of `w0`.
    pub fn svd(w0: Mat, rank: usize, s: f64, mode: SvdNormMode) -> Result<Self> {
        let (a, b) = init_svd_with(&w0, rank, s, mode)?;
        LoraAdapter::new(w0, a, b)
    }

    pub fn w0(&self) -> &Mat {
        &self.w0
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Replace both factors, keeping `w0`.
    pub fn with_factors(&self, a: Mat, b: Mat) -> Result<Self> {
        LoraAdapter::new(self.w0.clone(), a, b)
    }

    /// The low-rank product `a·b`.
    pub fn delta(&self) -> Mat {
        matmul(&self.a, &self.b).expect("adapter invariants fix the shapes")
    }

    pub fn trainable_params(&self) -> usize {
        self.a.data().len() + self.b.data().len()
    }
}

/// `w0 + a·b`.
pub fn compose_plain(ad: &LoraAdapter) -> Mat {
    ad.w0.add(&ad.delta()).expect("adapter invariants fix the shapes")
}

/// Factor gradients `(g_w·bᵀ, aᵀ·g_w)` for an effective-weight gradient.
pub fn grad_factors(g_w: &Mat, ad: &LoraAdapter) -> Result<(Mat, Mat)> {
    if g_w.shape() != ad.w0.shape() {
        return Err(Error::dim(format!(
            "weight gradient {:?} does not match base {:?}",
            g_w.shape(),
            ad.w0.shape()
        )));
    }
    Ok((matmul_nt(g_w, &ad.b)?, matmul_tn(&ad.a, g_w)?))
}

/// SGD with decoupled weight decay on both factors.
pub fn sgd_step_factors(
    ad: &LoraAdapter,
    d_a: &Mat,
    d_b: &Mat,
    lr: f64,
    weight_decay: f64,
) -> Result<LoraAdapter> {
    check_step(lr, weight_decay)?;
    let a = sgd(&ad.a, d_a, lr, weight_decay)?;
    let b = sgd(&ad.b, d_b, lr, weight_decay)?;
    Ok(LoraAdapter {
        w0: ad.w0.clone(),
        a,
        b,
    })
}

pub(crate) fn check_step(lr: f64, weight_decay: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::param(format!("learning rate must be > 0, got {lr}")));
    }
    if !(weight_decay >= 0.0) {
        return Err(Error::param(format!(
            "weight decay must be >= 0, got {weight_decay}"
        )));
    }
    Ok(())
}

/// `x − lr·(g + wd·x)`.
pub(crate) fn sgd(x: &Mat, g: &Mat, lr: f64, weight_decay: f64) -> Result<Mat> {
    if x.shape() != g.shape() {
        return Err(Error::dim(format!(
            "gradient {:?} does not match parameter {:?}",
            g.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &gv)| v - lr * (gv + weight_decay * v))
        .collect();
    Mat::from_vec(x.rows(), x.cols(), data)
}

fn check_rank(n: usize, d: usize, r: usize) -> Result<()> {
    if r == 0 || r > n.min(d) {
        return Err(Error::dim(format!("rank {r} out of range for {n}x{d}")));
    }
    Ok(())
}

/// `a0 ~ N(0, 2/n)`, `b0 = 0`.
pub fn init_kaiming(n: usize, d: usize, r: usize, rng: &mut Rng) -> Result<(Mat, Mat)> {
    check_rank(n, d, r)?;
    let a0 = rand_normal(rng, n, r, (2.0 / n as f64).sqrt())?;
    Ok((a0, Mat::zeros(r, d)))
}

/// `r / ‖σ_r‖₂²`.
pub fn compute_s_r(sigma_r: &[f64], r: usize) -> Result<f64> {
    compute_s_r_with(sigma_r, r, SvdNormMode::VectorL2)
}

pub fn compute_s_r_with(sigma_r: &[f64], r: usize, mode: SvdNormMode) -> Result<f64> {
    if sigma_r.len() != r {
        return Err(Error::dim(format!(
            "expected {r} singular values, got {}",
            sigma_r.len()
        )));
    }
    let sq = match mode {
        SvdNormMode::VectorL2 => sigma_r.iter().map(|s| s * s).sum::<f64>(),
        SvdNormMode::Spectral => sigma_r.iter().fold(0.0_f64, |m, s| m.max(s.abs())).powi(2),
    };
    if !(sq > 0.0) {
        return Err(Error::numeric("singular values are all zero"));
    }
    Ok(r as f64 / sq)
}

/// `a0 = s·U_r·√s_r`, `b0 = s·√s_r·V_rᵀ`.
pub fn init_svd(w0: &Mat, r: usize, s: f64) -> Result<(Mat, Mat)> {
    init_svd_with(w0, r, s, SvdNormMode::VectorL2)
}

pub fn init_svd_with(w0: &Mat, r: usize, s: f64, mode: SvdNormMode) -> Result<(Mat, Mat)> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::param(format!("svd scalar must be > 0, got {s}")));
    }
    let f = svd_top_r(w0, r)?;
    let s_r = compute_s_r_with(&f.sigma_r, r, mode)?;
    let k = s * s_r.sqrt();
    Ok((f.u_r.scale(k), f.v_r_t.scale(k)))
}
