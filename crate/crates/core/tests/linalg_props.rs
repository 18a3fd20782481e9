mod common;

use common::{abs_sum, any_mat, mat_with, naive_mul};
use largo_core::linalg::{l1_entrywise, matmul, max_abs_row_sum, svd_top_r, Mat};
use proptest::prelude::*;

fn gram_is_identity(m: &Mat, tol: f64) -> bool {
    let g = naive_mul(m, &m.transpose());
    (0..g.rows()).all(|i| (0..g.cols()).all(|j| (g.get(i, j) - if i == j { 1.0 } else { 0.0 }).abs() < tol))
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations.
fn sym_eigenvalues(s: &Mat) -> Vec<f64> {
    let n = s.rows();
    let mut a = s.clone();
    for _ in 0..200 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a.get(i, j).powi(2)).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

#[test]
fn truncated_residual_matches_tail_singular_values() {
    let m = mat_with(6, 4, 11, 1.0);
    let f = svd_top_r(&m, 3).unwrap();
    let resid = m.sub(&f.reconstruct()).unwrap().frobenius_norm().powi(2);
    let ev = sym_eigenvalues(&naive_mul(&m.transpose(), &m));
    let tail: f64 = ev[3..].iter().sum();
    assert!((resid - tail).abs() < 1e-8, "{resid} vs {tail}");
    for (s, e) in f.sigma_r.iter().zip(&ev) {
        assert!((s * s - e).abs() < 1e-8);
    }
}

#[test]
fn truncation_beats_random_orthonormal_factors() {
    let m = mat_with(7, 5, 3, 1.0);
    let r = 2;
    let best = m.sub(&svd_top_r(&m, r).unwrap().reconstruct()).unwrap().frobenius_norm();
    let mut beaten = 0;
    for t in 0..200 {
        // projecting m onto random orthonormal left and right bases of rank r
        let q_l = svd_top_r(&mat_with(7, r, 1000 + t, 1.0), r).unwrap().u_r;
        let q_r = svd_top_r(&mat_with(r, 5, 5000 + t, 1.0), r).unwrap().v_r_t;
        let core = naive_mul(&naive_mul(&q_l.transpose(), &m), &q_r.transpose());
        let approx = naive_mul(&naive_mul(&q_l, &core), &q_r);
        let resid = m.sub(&approx).unwrap().frobenius_norm();
        if resid + 1e-12 < best {
            beaten += 1;
        }
    }
    assert_eq!(beaten, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn l1_is_submultiplicative((a, b) in (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(n, k, d)| {
        (prop::collection::vec(-3.0f64..3.0, n * k), prop::collection::vec(-3.0f64..3.0, k * d))
            .prop_map(move |(x, y)| (Mat::from_vec(n, k, x).unwrap(), Mat::from_vec(k, d, y).unwrap()))
    })) {
        let lhs = l1_entrywise(&matmul(&a, &b).unwrap()).unwrap();
        let rhs = l1_entrywise(&a).unwrap() * l1_entrywise(&b).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn norms_match_definitions(m in any_mat(6, 6)) {
        prop_assert!((l1_entrywise(&m).unwrap() - abs_sum(&m)).abs() < 1e-12);
        let rows = (0..m.rows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        prop_assert!((max_abs_row_sum(&m).unwrap() - rows).abs() < 1e-12);
    }

    #[test]
    fn matmul_matches_naive(a in any_mat(9, 9), seed in any::<u64>()) {
        let b = mat_with(a.cols(), 1 + (seed % 7) as usize, seed, 1.0);
        let diff = common::max_abs_diff(&matmul(&a, &b).unwrap(), &naive_mul(&a, &b));
        prop_assert!(diff < 1e-12);
    }

    #[test]
    fn svd_factors_are_orthonormal(m in any_mat(7, 7), r_seed in 0usize..100) {
        let r = 1 + r_seed % m.rows().min(m.cols());
        let f = svd_top_r(&m, r).unwrap();
        prop_assert!(gram_is_identity(&f.u_r.transpose(), 1e-10));
        prop_assert!(gram_is_identity(&f.v_r_t, 1e-10));
        prop_assert!(f.sigma_r.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.sigma_r.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn full_rank_svd_reconstructs(m in any_mat(7, 7)) {
        let f = svd_top_r(&m, m.rows().min(m.cols())).unwrap();
        prop_assert!(m.sub(&f.reconstruct()).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn operations_are_pure(a in any_mat(6, 6)) {
        let at = a.transpose();
        prop_assert_eq!(matmul(&a, &at).unwrap(), matmul(&a, &at).unwrap());
        let r = a.rows().min(a.cols());
        prop_assert_eq!(svd_top_r(&a, r).unwrap(), svd_top_r(&a, r).unwrap());
    }
}
