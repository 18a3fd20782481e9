//! Synthetic domain-shift benchmark.
//!
//! Samples are class-conditional Gaussian clusters living on a random
//! low-dimensional informative subspace, embedded in a higher-dimensional
//! space padded with pure-noise coordinates. A domain is a nuisance
//! transform applied to clean samples: a rotation inside the informative
//! subspace, additive isotropic noise and a fixed coordinate mask.
//!
//! * pretraining data mixes random transforms drawn up to configured maxima;
//! * in-distribution (ID) data is untransformed;
//! * each out-of-distribution (OOD) domain applies one fixed transform to
//!   fresh ID-distributed samples.

mod csv_io;

pub use csv_io::{read_bundle_csv, write_bundle_csv};

use crate::error::{Error, Result};
use crate::linalg::{rand_normal, Mat, Rng};
use crate::model::Batch;

/// A fixed nuisance transform.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftDomain {
    pub name: String,
    /// Rotation applied to each coordinate pair of the informative subspace.
    pub angle: f64,
    pub noise_std: f64,
    /// Fraction of coordinates zeroed.
    pub mask_fraction: f64,
}

impl ShiftDomain {
    pub fn new(name: impl Into<String>, angle: f64, noise_std: f64, mask_fraction: f64) -> Self {
        ShiftDomain {
            name: name.into(),
            angle,
            noise_std,
            mask_fraction,
        }
    }

    pub fn identity(name: impl Into<String>) -> Self {
        ShiftDomain::new(name, 0.0, 0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSpec {
    pub classes: usize,
    pub input_dim: usize,
    pub informative_dim: usize,
    pub n_pretrain: usize,
    pub n_id_train: usize,
    pub n_id_val: usize,
    /// Samples per OOD domain.
    pub n_ood: usize,
    pub ood_domains: Vec<ShiftDomain>,
    /// Fraction of `n_id_train` kept for fine-tuning.
    pub id_fraction: f64,
    pub seed: u64,
    /// Standard deviation of the class means.
    pub class_sep: f64,
    /// Within-class standard deviation on the informative subspace.
    pub cluster_std: f64,
    /// Pretraining transforms draw angle, noise and mask uniformly up to these.
    pub pretrain_max_angle: f64,
    pub pretrain_max_noise: f64,
    pub pretrain_max_mask: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        use std::f64::consts::PI;
        ShiftSpec {
            classes: 5,
            input_dim: 20,
            informative_dim: 4,
            n_pretrain: 20_000,
            n_id_train: 2_000,
            n_id_val: 1_000,
            n_ood: 2_000,
            ood_domains: vec![
                ShiftDomain::new("rotated", PI / 4.0, 0.0, 0.0),
                ShiftDomain::new("noisy", PI / 8.0, 0.6, 0.0),
                ShiftDomain::new("masked", PI / 8.0, 0.0, 0.25),
            ],
            id_fraction: 1.0,
            seed: 0,
            class_sep: 1.5,
            cluster_std: 0.6,
            pretrain_max_angle: PI / 2.0,
            pretrain_max_noise: 0.8,
            pretrain_max_mask: 0.3,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::PI;
        let fail = |m: String| Err(Error::param(m));
        if self.classes < 2 {
            return fail(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.informative_dim == 0 || self.informative_dim > self.input_dim {
            return fail(format!(
                "informative_dim {} must lie in [1, input_dim = {}]",
                self.informative_dim, self.input_dim
            ));
        }
        for (name, n) in [
            ("n_pretrain", self.n_pretrain),
            ("n_id_train", self.n_id_train),
            ("n_id_val", self.n_id_val),
            ("n_ood", self.n_ood),
        ] {
            if n < self.classes {
                return fail(format!("{name} = {n} is below the class count {}", self.classes));
            }
        }
        if !(self.id_fraction > 0.0 && self.id_fraction <= 1.0) {
            return fail(format!("id_fraction must lie in (0, 1], got {}", self.id_fraction));
        }
        if self.id_train_len() < self.classes {
            return fail(format!(
                "id_fraction {} leaves fewer ID samples than classes",
                self.id_fraction
            ));
        }
        if !(self.class_sep >= 0.0 && self.cluster_std >= 0.0) {
            return fail("class_sep and cluster_std must be >= 0".into());
        }
        let domains = self.ood_domains.iter().cloned().chain(std::iter::once(ShiftDomain::new(
            "pretrain mixture",
            self.pretrain_max_angle,
            self.pretrain_max_noise,
            self.pretrain_max_mask,
        )));
        for d in domains {
            if !(0.0..=PI).contains(&d.angle) {
                return fail(format!("domain {}: angle {} outside [0, π]", d.name, d.angle));
            }
            if !(d.noise_std >= 0.0) {
                return fail(format!("domain {}: negative noise", d.name));
            }
            if !(0.0..=1.0).contains(&d.mask_fraction) {
                return fail(format!("domain {}: mask fraction outside [0, 1]", d.name));
            }
        }
        Ok(())
    }

    pub fn id_train_len(&self) -> usize {
        ((self.id_fraction * self.n_id_train as f64).ceil() as usize).min(self.n_id_train)
    }
}

/// The generative parameters shared by every split.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftModel {
    /// Orthonormal `input_dim x input_dim`; the first `informative_dim`
    /// columns span the informative subspace.
    pub basis: Mat,
    /// `classes x informative_dim`.
    pub means: Mat,
    pub cluster_std: f64,
    /// Coordinate order used by masks: a fraction `f` zeroes the first
    /// `round(f·input_dim)` coordinates listed here.
    pub mask_order: Vec<usize>,
    pub informative_dim: usize,
}

impl ShiftModel {
    pub fn from_spec(spec: &ShiftSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(spec.seed).fork(0);
        let basis = random_orthonormal(&mut rng, spec.input_dim)?;
        let means = rand_normal(&mut rng, spec.classes, spec.informative_dim, spec.class_sep)?;
        let mask_order = rng.permutation(spec.input_dim);
        Ok(ShiftModel {
            basis,
            means,
            cluster_std: spec.cluster_std,
            mask_order,
            informative_dim: spec.informative_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn classes(&self) -> usize {
        self.means.rows()
    }

    /// Untransformed samples with cyclic labels `0, 1, …, C−1, 0, …`.
    pub fn sample_clean(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        let dim = self.input_dim();
        let k = self.informative_dim;
        let c = self.classes();
        let mut x = Mat::zeros(n, dim);
        let mut y = Vec::with_capacity(n);
        let mut latent = vec![0.0; dim];
        for i in 0..n {
            let label = i % c;
            for (j, z) in latent.iter_mut().enumerate() {
                *z = if j < k {
                    self.means.get(label, j) + self.cluster_std * rng.normal()
                } else {
                    rng.normal()
                };
            }
            let row = x.row_mut(i);
            for (p, out) in row.iter_mut().enumerate() {
                *out = (0..dim).map(|q| self.basis.get(p, q) * latent[q]).sum();
            }
            y.push(label);
        }
        Batch::new(x, y)
    }

    /// Applies `domain` to every row of `x`.
    pub fn apply_shift(&self, x: &Mat, domain: &ShiftDomain, rng: &mut Rng) -> Result<Mat> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.shift_row(out.row_mut(i), domain.angle, domain.noise_std, domain.mask_fraction, rng)?;
        }
        Ok(out)
    }

    fn shift_row(&self, row: &mut [f64], angle: f64, noise: f64, mask: f64, rng: &mut Rng) -> Result<()> {
        let dim = self.input_dim();
        if row.len() != dim {
            return Err(Error::dim(format!("sample has {} features, expected {dim}", row.len())));
        }
        if angle != 0.0 {
            let k = self.informative_dim;
            let coords: Vec<f64> = (0..k)
                .map(|q| (0..dim).map(|p| self.basis.get(p, q) * row[p]).sum())
                .collect();
            let (s, c) = angle.sin_cos();
            let mut change = vec![0.0; k];
            for pair in 0..k / 2 {
                let (u, v) = (coords[2 * pair], coords[2 * pair + 1]);
                change[2 * pair] = (c * u - s * v) - u;
                change[2 * pair + 1] = (s * u + c * v) - v;
            }
            for (p, x) in row.iter_mut().enumerate() {
                *x += (0..k).map(|q| self.basis.get(p, q) * change[q]).sum::<f64>();
            }
        }
        if noise > 0.0 {
            for x in row.iter_mut() {
                *x += noise * rng.normal();
            }
        }
        let masked = (mask * dim as f64).round() as usize;
        for &p in &self.mask_order[..masked.min(dim)] {
            row[p] = 0.0;
        }
        Ok(())
    }

    /// Samples under independent random transforms, one per row.
    fn sample_mixture(&self, spec: &ShiftSpec, n: usize, rng: &mut Rng) -> Result<Batch> {
        let mut batch = self.sample_clean(n, rng)?;
        for i in 0..n {
            let angle = rng.uniform(0.0, spec.pretrain_max_angle);
            let noise = rng.uniform(0.0, spec.pretrain_max_noise);
            let mask = rng.uniform(0.0, spec.pretrain_max_mask);
            self.shift_row(batch.x.row_mut(i), angle, noise, mask, rng)?;
        }
        Ok(batch)
    }
}

/// `apply_shift` on a standalone generative model.
pub fn apply_shift(model: &ShiftModel, x: &Mat, domain: &ShiftDomain, rng: &mut Rng) -> Result<Mat> {
    model.apply_shift(x, domain, rng)
}

fn random_orthonormal(rng: &mut Rng, n: usize) -> Result<Mat> {
    let g = rand_normal(rng, n, n, 1.0)?;
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = g.col(j);
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= d * ci;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-10) {
            return Err(Error::numeric("degenerate random basis"));
        }
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    Ok(Mat::from_fn(n, n, |i, j| cols[j][i]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub pretrain: Batch,
    pub id_train: Batch,
    pub id_val: Batch,
    pub ood: Vec<(String, Batch)>,
}

impl DatasetBundle {
    pub fn input_dim(&self) -> usize {
        self.id_train.x.cols()
    }

    pub fn classes(&self) -> usize {
        self.id_train.y.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Draws every split of the benchmark. Deterministic in `spec.seed`.
pub fn generate(spec: &ShiftSpec) -> Result<DatasetBundle> {
    let model = ShiftModel::from_spec(spec)?;
    let root = Rng::new(spec.seed);
    let pretrain = model.sample_mixture(spec, spec.n_pretrain, &mut root.fork(1))?;
    let id_full = model.sample_clean(spec.n_id_train, &mut root.fork(2))?;
    let id_train = id_full.head(spec.id_train_len());
    let id_val = model.sample_clean(spec.n_id_val, &mut root.fork(3))?;
    let mut ood = Vec::with_capacity(spec.ood_domains.len());
    for (k, d) in spec.ood_domains.iter().enumerate() {
        let mut rng = root.fork(100 + k as u64);
        let clean = model.sample_clean(spec.n_ood, &mut rng)?;
        let x = model.apply_shift(&clean.x, d, &mut rng)?;
        ood.push((d.name.clone(), Batch::new(x, clean.y)?));
    }
    Ok(DatasetBundle {
        pretrain,
        id_train,
        id_val,
        ood,
    })
}
