//! Central-difference checks of every analytic gradient in the crate.

use crate::error::Result;
use crate::largo::{self, FactorGradMode, GammaPair, LargoState};
use crate::linalg::{matmul, rand_normal, Mat, Rng};
use crate::lora::{self, LoraAdapter};
use crate::model::{Activation, Batch, LayerWeight, MlpSpec, ModelState};
use crate::projection::{project_mars, project_mars_with_scales};
use crate::tpgm;

/// Step for coordinate `x` is `REL_STEP·max(1, |x|)`.
pub const REL_STEP: f64 = 1e-6;

/// Default pass threshold for [`Report::passed`].
pub const TOLERANCE: f64 = 1e-5;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = REL_STEP * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = l2(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = l2(&mut analytic.iter().copied()).max(l2(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub trial: usize,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn worst(&self) -> Option<&Check> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.checks.iter().all(|c| c.rel_err < tol)
    }
}

/// Two-layer tanh network whose first weight is the matrix under test.
struct Probe {
    model: ModelState,
    batch: Batch,
}

impl Probe {
    fn new(n: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        let classes = 3;
        let spec = MlpSpec::new(vec![d, n, classes], Activation::Tanh)?;
        let model = ModelState::init(&spec, rng)?;
        let x = rand_normal(rng, 6, d, 1.0)?;
        let y = (0..6).map(|i| i % classes).collect();
        Ok(Probe {
            model,
            batch: Batch::new(x, y)?,
        })
    }

    fn with_weight(&self, w: Mat) -> ModelState {
        let mut m = self.model.clone();
        m.layers[0].weight = LayerWeight::Dense(w);
        m
    }

    fn loss(&self, w: &Mat) -> f64 {
        self.with_weight(w.clone())
            .loss_and_grads(&self.batch)
            .map(|r| r.0)
            .unwrap_or(f64::NAN)
    }

    fn grad(&self, w: &Mat) -> Result<Mat> {
        let (_, g) = self.with_weight(w.clone()).loss_and_grads(&self.batch)?;
        Ok(g.weights[0].clone())
    }
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    matmul(a, b).expect("conforming factors")
}

fn reshape(like: &Mat, v: &[f64]) -> Mat {
    Mat::from_vec(like.rows(), like.cols(), v.to_vec()).expect("same length")
}

/// Full network parameters flattened in layer order: weight then bias.
fn flatten_params(ms: &ModelState) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &ms.layers {
        out.extend_from_slice(l.weight.base().data());
        out.extend_from_slice(&l.bias);
    }
    out
}

fn unflatten_params(ms: &ModelState, v: &[f64]) -> ModelState {
    let mut out = ms.clone();
    let mut pos = 0;
    for l in &mut out.layers {
        let (o, i) = l.weight.shape();
        l.weight = LayerWeight::Dense(Mat::from_vec(o, i, v[pos..pos + o * i].to_vec()).expect("sized"));
        pos += o * i;
        l.bias = v[pos..pos + o].to_vec();
        pos += o;
    }
    out
}

fn check_model(rng: &mut Rng) -> Result<f64> {
    let dims: Vec<usize> = (0..4).map(|_| 2 + rng.below(7)).collect();
    let spec = MlpSpec::new(dims.clone(), Activation::Tanh)?;
    let mut ms = ModelState::init(&spec, rng)?;
    for l in &mut ms.layers {
        l.bias = (0..l.bias.len()).map(|_| 0.3 * rng.normal()).collect();
    }
    let x = rand_normal(rng, 5, dims[0], 1.0)?;
    let classes = dims[3];
    let y = (0..5).map(|_| rng.below(classes)).collect();
    let batch = Batch::new(x, y)?;
    let (_, g) = ms.loss_and_grads(&batch)?;
    let mut analytic = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.biases) {
        analytic.extend_from_slice(w.data());
        analytic.extend_from_slice(b);
    }
    let numeric = central_diff(&flatten_params(&ms), |v| {
        unflatten_params(&ms, v).loss_and_grads(&batch).map(|r| r.0).unwrap_or(f64::NAN)
    });
    Ok(rel_error(&analytic, &numeric))
}

/// One random instance of every check.
fn trial(t: usize, rng: &mut Rng, out: &mut Vec<Check>) -> Result<()> {
    let mut push = |name, rel_err| out.push(Check { name, trial: t, rel_err });
    push("model_weights_biases", check_model(rng)?);

    let n = 2 + rng.below(7);
    let d = 2 + rng.below(7);
    let r = 1 + rng.below(3.min(n).min(d));
    let probe = Probe::new(n, d, rng)?;
    let w0 = rand_normal(rng, n, d, 0.7)?;
    let a = rand_normal(rng, n, r, 1.0)?;
    let b = rand_normal(rng, r, d, 1.0)?;
    let ad = LoraAdapter::new(w0.clone(), a.clone(), b.clone())?;

    let g_plain = probe.grad(&lora::compose_plain(&ad))?;
    let (da, db) = lora::grad_factors(&g_plain, &ad)?;
    let num_a = central_diff(a.data(), |v| {
        probe.loss(&w0.add(&mm(&reshape(&a, v), &b)).unwrap())
    });
    let num_b = central_diff(b.data(), |v| {
        probe.loss(&w0.add(&mm(&a, &reshape(&b, v))).unwrap())
    });
    push("lora_a", rel_error(da.data(), &num_a));
    push("lora_b", rel_error(db.data(), &num_b));

    let ga = 0.5 + rng.uniform(0.0, 1.5);
    let gb = 0.5 + rng.uniform(0.0, 1.5);
    let st = LargoState::new(ad.clone(), GammaPair::new(ga, gb, 0.1)?);
    let c = largo::scale_factor(&st);
    let g_reg = probe.grad(&largo::compose_regulated(&st))?;
    let regulated_at = |a: &Mat, b: &Mat| {
        let st2 = LargoState {
            adapter: ad.with_factors(a.clone(), b.clone()).unwrap(),
            ..st.clone()
        };
        probe.loss(&largo::compose_regulated(&st2))
    };

    let (ra, rb) = largo::factor_grads(&g_reg, &st, FactorGradMode::Regulated)?;
    let frozen = |a: &Mat, b: &Mat| probe.loss(&w0.add(&mm(a, b).scale(c)).unwrap());
    let num_a = central_diff(a.data(), |v| frozen(&reshape(&a, v), &b));
    let num_b = central_diff(b.data(), |v| frozen(&a, &reshape(&b, v)));
    push("largo_regulated_a", rel_error(ra.data(), &num_a));
    push("largo_regulated_b", rel_error(rb.data(), &num_b));

    let (pa, pb) = largo::factor_grads(&g_plain, &st, FactorGradMode::Plain)?;
    let num_a = central_diff(a.data(), |v| {
        probe.loss(&w0.add(&mm(&reshape(&a, v), &b)).unwrap())
    });
    let num_b = central_diff(b.data(), |v| {
        probe.loss(&w0.add(&mm(&a, &reshape(&b, v))).unwrap())
    });
    push("largo_plain_a", rel_error(pa.data(), &num_a));
    push("largo_plain_b", rel_error(pb.data(), &num_b));

    let (ea, eb) = largo::factor_grads(&g_reg, &st, FactorGradMode::Exact)?;
    let num_a = central_diff(a.data(), |v| regulated_at(&reshape(&a, v), &b));
    let num_b = central_diff(b.data(), |v| regulated_at(&a, &reshape(&b, v)));
    push("largo_exact_a", rel_error(ea.data(), &num_a));
    push("largo_exact_b", rel_error(eb.data(), &num_b));

    let (dga, dgb) = largo::gamma_grads(&g_reg, &st)?;
    let at_gammas = |x: f64, y: f64| {
        let st2 = LargoState {
            gammas: GammaPair::new(x, y, 0.1).unwrap(),
            ..st.clone()
        };
        probe.loss(&largo::compose_regulated(&st2))
    };
    let num = central_diff(&[ga, gb], |v| at_gammas(v[0], v[1]));
    push("largo_gamma_a", rel_error(&[dga], &num[..1]));
    push("largo_gamma_b", rel_error(&[dgb], &num[1..]));

    let w_hat = w0.add(&rand_normal(rng, n, d, 1.0)?)?;
    let norms: Vec<f64> = (0..n)
        .map(|i| w_hat.row(i).iter().zip(w0.row(i)).map(|(x, y)| (x - y).abs()).sum())
        .collect();
    let mut sorted = norms;
    sorted.sort_by(f64::total_cmp);
    // midway between two row norms, so the active set is stable under perturbation
    let gamma = 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    let (w_tilde, rows) = project_mars_with_scales(&w0, &w_hat, gamma)?;
    let d_gamma = tpgm::radius_gradient(&w0, &w_hat, &rows, &probe.grad(&w_tilde)?)?;
    let num = central_diff(&[gamma], |v| probe.loss(&project_mars(&w0, &w_hat, v[0]).unwrap()));
    push("tpgm_gamma", rel_error(&[d_gamma], &num));
    Ok(())
}

/// Runs `trials` random instances of every check (dims ≤ 8, rank ≤ 3).
pub fn run_suite(trials: usize, seed: u64) -> Result<Report> {
    let root = Rng::new(seed);
    let mut checks = Vec::new();
    for t in 0..trials {
        trial(t, &mut root.fork(t as u64), &mut checks)?;
    }
    Ok(Report { checks })
}
