//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed. ChaCha output
//! is specified bit-for-bit, so a seed reproduces the same draws on every
//! platform. Normal variates come from `rand_distr::StandardNormal`.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this seed and a purpose tag.
    ///
    /// Forking does not advance `self`, so adding a new consumer never
    /// perturbs existing streams.
    pub fn fork(&self, tag: u64) -> Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(tag.wrapping_add(1));
        let seed = r.random::<u64>();
        Rng::new(seed)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// Matrix of i.i.d. `N(0, std²)` entries.
pub fn rand_normal(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Result<Mat> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::param(format!("std must be finite and >= 0, got {std}")));
    }
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Mat::from_vec(rows, cols, data)
}
