mod common;

use common::any_mat;
use largo_core::linalg::Mat;
use largo_core::projection::{constraint_violation, project_mars, project_row};
use proptest::prelude::*;

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Per-row radial rescaling written out longhand.
fn reference_projection(w0: &Mat, w_hat: &Mat, gamma: f64) -> Mat {
    let mut out = w0.clone();
    for i in 0..w0.rows() {
        let mut norm = 0.0;
        for j in 0..w0.cols() {
            norm += (w_hat.get(i, j) - w0.get(i, j)).abs();
        }
        let shrink = if norm > gamma { gamma / norm } else { 1.0 };
        for j in 0..w0.cols() {
            out.set(i, j, w0.get(i, j) + (w_hat.get(i, j) - w0.get(i, j)) * shrink);
        }
    }
    out
}

fn pair() -> impl Strategy<Value = (Mat, Mat, f64)> {
    any_mat(6, 6).prop_flat_map(|w0| {
        let (r, c) = w0.shape();
        (
            Just(w0),
            prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Mat::from_vec(r, c, v).unwrap()),
            1e-3f64..10.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn row_norm_is_capped_exactly(delta in prop::collection::vec(-5.0f64..5.0, 1..10), gamma in 1e-3f64..10.0) {
        let out = project_row(&delta, gamma);
        let want = l1(&delta).min(gamma);
        prop_assert!((l1(&out) - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn row_direction_is_preserved(delta in prop::collection::vec(-5.0f64..5.0, 1..10), gamma in 1e-3f64..10.0) {
        let out = project_row(&delta, gamma);
        let (k, &pivot) = delta.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
        if pivot != 0.0 {
            let alpha = out[k] / pivot;
            prop_assert!(alpha > 0.0 && alpha <= 1.0);
            for (o, d) in out.iter().zip(&delta) {
                prop_assert!((o - alpha * d).abs() <= 1e-12 * d.abs().max(1.0));
            }
        } else {
            prop_assert!(out.iter().all(|&o| o == 0.0));
        }
    }

    #[test]
    fn mars_is_idempotent((w0, w_hat, gamma) in pair()) {
        let once = project_mars(&w0, &w_hat, gamma).unwrap();
        let twice = project_mars(&w0, &once, gamma).unwrap();
        prop_assert!(common::max_abs_diff(&once, &twice) <= 1e-12);
    }

    #[test]
    fn mars_rows_are_feasible((w0, w_hat, gamma) in pair()) {
        let out = project_mars(&w0, &w_hat, gamma).unwrap();
        for i in 0..w0.rows() {
            prop_assert!(constraint_violation(out.row(i), w0.row(i), gamma).unwrap() <= 1e-12 * gamma.max(1.0));
        }
    }

    #[test]
    fn mars_equals_per_row_loop((w0, w_hat, gamma) in pair()) {
        let out = project_mars(&w0, &w_hat, gamma).unwrap();
        prop_assert!(common::max_abs_diff(&out, &reference_projection(&w0, &w_hat, gamma)) <= 1e-12);
        for i in 0..w0.rows() {
            let delta: Vec<f64> = w_hat.row(i).iter().zip(w0.row(i)).map(|(a, b)| a - b).collect();
            let row: Vec<f64> = project_row(&delta, gamma).iter().zip(w0.row(i)).map(|(d, b)| d + b).collect();
            for (o, r) in out.row(i).iter().zip(&row) {
                prop_assert!((o - r).abs() <= 1e-12);
            }
        }
    }
}
