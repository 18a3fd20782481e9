//! Truncated SVD by one-sided (Hestenes) Jacobi rotations.

use super::mat::dot;
use super::Mat;
use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 100;
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Leading `r` singular triplets of a matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors {
    /// `n x r`, orthonormal columns.
    pub u_r: Mat,
    /// Nonincreasing, nonnegative.
    pub sigma_r: Vec<f64>,
    /// `r x d`, orthonormal rows.
    pub v_r_t: Mat,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma_r.len()
    }

    /// `U_r diag(σ_r) V_rᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let scaled = Mat::from_fn(self.u_r.rows(), self.rank(), |i, k| {
            self.u_r.get(i, k) * self.sigma_r[k]
        });
        super::matmul(&scaled, &self.v_r_t).expect("factor shapes are consistent")
    }
}

/// Best rank-`r` approximation factors of `m`.
pub fn svd_top_r(m: &Mat, r: usize) -> Result<SvdFactors> {
    let (n, d) = m.shape();
    if r == 0 || r > n.min(d) {
        return Err(Error::dim(format!(
            "svd rank {r} out of range for a {n}x{d} matrix"
        )));
    }
    if !m.all_finite() {
        return Err(Error::numeric("svd input has non-finite entries"));
    }
    if n >= d {
        let (u, sigma, v) = jacobi_tall(m)?;
        Ok(truncate(u, sigma, v, r))
    } else {
        // m = (mᵀ)ᵀ = (U Σ Vᵀ)ᵀ = V Σ Uᵀ
        let (u, sigma, v) = jacobi_tall(&m.transpose())?;
        Ok(truncate(v, sigma, u, r))
    }
}

/// Full thin SVD of a tall (`n >= d`) matrix as column lists:
/// left vectors (n each), singular values, right vectors (d each), sorted.
type Columns = Vec<Vec<f64>>;

fn jacobi_tall(m: &Mat) -> Result<(Columns, Vec<f64>, Columns)> {
    let (n, d) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..d).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            e
        })
        .collect();

    let scale = m.frobenius_norm();
    let negligible = (f64::EPSILON * scale).powi(2);

    let mut converged = scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0_f64;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                let cos_angle = gamma.abs() / (alpha * beta).sqrt();
                off = off.max(cos_angle);
                if cos_angle <= OFF_DIAGONAL_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if off <= OFF_DIAGONAL_TOL {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::numeric(format!(
            "one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    // stable sort keeps ties in column order, so output is reproducible
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    let mut v_cols = Vec::with_capacity(d);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        v_cols.push(v[j].clone());
        if s * s > negligible && s > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(vec![0.0; n]);
            deficient.push(k);
        }
    }
    for k in deficient {
        let col = complete_basis(&u_cols, k, n);
        u_cols[k] = col;
    }
    Ok((u_cols, sigma, v_cols))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Unit vector orthogonal to every nonzero column in `cols` other than `skip`.
fn complete_basis(cols: &[Vec<f64>], skip: usize, n: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..n {
        let mut w = vec![0.0; n];
        w[e] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let proj = dot(c, &w);
                for (wi, ci) in w.iter_mut().zip(c) {
                    *wi -= proj * ci;
                }
            }
        }
        let norm = dot(&w, &w).sqrt();
        if best.as_ref().is_none_or(|(b, _)| norm > *b) {
            best = Some((norm, w));
        }
    }
    let (norm, w) = best.expect("n >= 1");
    w.into_iter().map(|x| x / norm).collect()
}

fn truncate(u: Vec<Vec<f64>>, sigma: Vec<f64>, v: Vec<Vec<f64>>, r: usize) -> SvdFactors {
    let n = u[0].len();
    let d = v[0].len();
    let u_r = Mat::from_fn(n, r, |i, k| u[k][i]);
    let v_r_t = Mat::from_fn(r, d, |k, j| v[k][j]);
    SvdFactors {
        u_r,
        sigma_r: sigma[..r].to_vec(),
        v_r_t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matmul, matmul_tn, rand_normal, Rng};

    fn orthonormal_cols_err(m: &Mat) -> f64 {
        let g = matmul_tn(m, m).unwrap();
        g.sub(&Mat::identity(m.cols())).unwrap().max_abs()
    }

    #[test]
    fn diagonal_input() {
        let f = svd_top_r(&Mat::diag(&[3.0, 1.0]), 1).unwrap();
        assert_eq!(f.sigma_r, vec![3.0]);
        assert_eq!(f.u_r.col(0).iter().map(|x| x.abs()).collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(f.v_r_t.row(0).iter().map(|x| x.abs()).collect::<Vec<_>>(), vec![1.0, 0.0]);
        // signs of u and v agree so the product is +3 e1 e1ᵀ
        assert_eq!(f.u_r.get(0, 0) * f.v_r_t.get(0, 0), 1.0);
    }

    #[test]
    fn identity_input() {
        let f = svd_top_r(&Mat::identity(2), 2).unwrap();
        assert_eq!(f.sigma_r, vec![1.0, 1.0]);
    }

    #[test]
    fn rank_out_of_range() {
        let m = Mat::zeros(3, 2);
        assert!(matches!(svd_top_r(&m, 0), Err(Error::Dimension(_))));
        assert!(matches!(svd_top_r(&m, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn wide_and_tall_reconstruct() {
        let mut rng = Rng::new(11);
        for &(n, d) in &[(6, 4), (4, 6), (5, 5), (1, 7), (7, 1)] {
            let m = rand_normal(&mut rng, n, d, 1.0).unwrap();
            let f = svd_top_r(&m, n.min(d)).unwrap();
            let err = f.reconstruct().sub(&m).unwrap().frobenius_norm();
            assert!(err < 1e-10, "{n}x{d}: {err}");
            assert!(orthonormal_cols_err(&f.u_r) < 1e-10);
            assert!(orthonormal_cols_err(&f.v_r_t.transpose()) < 1e-10);
            assert!(f.sigma_r.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_completes_basis() {
        let col = Mat::from_vec(4, 1, vec![1.0, 2.0, 0.0, -1.0]).unwrap();
        let row = Mat::from_vec(1, 3, vec![0.5, 0.0, 2.0]).unwrap();
        let m = matmul(&col, &row).unwrap();
        let f = svd_top_r(&m, 3).unwrap();
        assert!(orthonormal_cols_err(&f.u_r) < 1e-10);
        assert!(orthonormal_cols_err(&f.v_r_t.transpose()) < 1e-10);
        assert!(f.sigma_r[1] < 1e-12 && f.sigma_r[2] < 1e-12);
        assert!(f.reconstruct().sub(&m).unwrap().frobenius_norm() < 1e-12);

        let z = svd_top_r(&Mat::zeros(3, 2), 2).unwrap();
        assert_eq!(z.sigma_r, vec![0.0, 0.0]);
        assert!(orthonormal_cols_err(&z.u_r) < 1e-12);
    }

    #[test]
    fn deterministic() {
        let m = rand_normal(&mut Rng::new(5), 7, 5, 1.0).unwrap();
        assert_eq!(svd_top_r(&m, 3).unwrap(), svd_top_r(&m, 3).unwrap());
    }
}
