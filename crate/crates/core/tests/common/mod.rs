#![allow(dead_code)]

use largo_core::linalg::{rand_normal, Mat, Rng};
use proptest::prelude::*;

pub fn mat_with(rows: usize, cols: usize, seed: u64, std: f64) -> Mat {
    rand_normal(&mut Rng::new(seed), rows, cols, std).unwrap()
}

/// Matrix with 1..=max_r rows and 1..=max_c columns, entries in [-3, 3].
pub fn any_mat(max_r: usize, max_c: usize) -> impl Strategy<Value = Mat> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Mat::from_vec(r, c, v).unwrap())
    })
}

/// Naive triple-loop product.
pub fn naive_mul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols(), b.rows());
    Mat::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

pub fn abs_sum(m: &Mat) -> f64 {
    m.data().iter().map(|v| v.abs()).sum()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central difference of `f` at every coordinate of `x`.
/// Five-point stencil with a wider step. Use it when the gradient is small
/// next to the loss value, where central differences drown in rounding.
pub fn numeric_grad_5pt(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-3 * x[i].abs().max(1.0);
            let orig = p[i];
            let mut at = |k: f64| {
                p[i] = orig + k * h;
                f(&p)
            };
            let g = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h);
            p[i] = orig;
            g
        })
        .collect()
}

pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// A smooth test loss on a weight matrix: `Σ t·w + ½(Σ w²)·0.3 + Σ sin(w)`.
pub struct SmoothLoss {
    pub target: Mat,
}

impl SmoothLoss {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        SmoothLoss { target: mat_with(rows, cols, seed, 1.0) }
    }

    pub fn value(&self, w: &Mat) -> f64 {
        w.data()
            .iter()
            .zip(self.target.data())
            .map(|(x, t)| t * x + 0.15 * x * x + x.sin())
            .sum()
    }

    pub fn grad(&self, w: &Mat) -> Mat {
        let data = w
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(x, t)| t + 0.3 * x + x.cos())
            .collect();
        Mat::from_vec(w.rows(), w.cols(), data).unwrap()
    }
}
