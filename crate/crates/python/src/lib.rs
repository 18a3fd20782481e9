//! Python bindings.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`).
//!
//! ```python
//! import largo
//! bench = largo.Benchmark(seed=0, n_pretrain=2000)
//! base = largo.pretrain(bench, epochs=5)
//! rows, model = largo.finetune(base, bench, {"method": "largo", "epochs": 3})
//! ```

use std::collections::HashMap;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use largo_core::data::{generate, DatasetBundle, ShiftDomain, ShiftSpec};
use largo_core::gradcheck;
use largo_core::largo::{self as reg, FactorGradMode, GammaPair, LargoState as CoreLargo};
use largo_core::linalg::{self, Mat, NormMode, Rng};
use largo_core::lora::{self, LoraAdapter as CoreLora};
use largo_core::model::{checkpoint, Batch, ModelState};
use largo_core::train::{self, MetricsRow, PretrainConfig, RunConfig};
use largo_core::{projection, tpgm, Error};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::Numeric(_) => PyArithmeticError::new_err(msg),
        Error::Io { .. } | Error::Format(_) => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for largo_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A matrix as a list of rows.
type Rows = Vec<Vec<f64>>;

fn mat(rows: Rows) -> PyResult<Mat> {
    if rows.is_empty() {
        return Ok(Mat::zeros(0, 0));
    }
    Mat::from_rows(&rows).py()
}

fn rows(m: &Mat) -> Rows {
    m.to_rows()
}

fn norm_mode(s: &str) -> PyResult<NormMode> {
    match s {
        "entrywise" => Ok(NormMode::Entrywise),
        "mars_row_sum" => Ok(NormMode::MarsRowSum),
        _ => Err(PyValueError::new_err(format!("unknown norm mode {s:?}"))),
    }
}

fn factor_mode(s: &str) -> PyResult<FactorGradMode> {
    match s {
        "regulated" => Ok(FactorGradMode::Regulated),
        "plain" => Ok(FactorGradMode::Plain),
        "exact" => Ok(FactorGradMode::Exact),
        _ => Err(PyValueError::new_err(format!("unknown factor gradient mode {s:?}"))),
    }
}

#[pyfunction]
fn l1_entrywise(m: Rows) -> PyResult<f64> {
    linalg::l1_entrywise(&mat(m)?).py()
}

#[pyfunction]
fn max_abs_row_sum(m: Rows) -> PyResult<f64> {
    linalg::max_abs_row_sum(&mat(m)?).py()
}

/// Top-`r` singular triplets as `(u, sigma, vt)`.
#[pyfunction]
fn svd_top_r(m: Rows, r: usize) -> PyResult<(Rows, Vec<f64>, Rows)> {
    let f = linalg::svd_top_r(&mat(m)?, r).py()?;
    Ok((rows(&f.u_r), f.sigma_r.clone(), rows(&f.v_r_t)))
}

#[pyfunction]
fn project_row(delta: Vec<f64>, gamma: f64) -> Vec<f64> {
    projection::project_row(&delta, gamma)
}

#[pyfunction]
fn project_mars(w0: Rows, w_hat: Rows, gamma: f64) -> PyResult<Rows> {
    Ok(rows(&projection::project_mars(&mat(w0)?, &mat(w_hat)?, gamma).py()?))
}

#[pyfunction]
fn compute_s_r(sigma: Vec<f64>, r: usize) -> PyResult<f64> {
    lora::compute_s_r(&sigma, r).py()
}

#[pyfunction]
fn init_svd(w0: Rows, r: usize, s: f64) -> PyResult<(Rows, Rows)> {
    let (a, b) = lora::init_svd(&mat(w0)?, r, s).py()?;
    Ok((rows(&a), rows(&b)))
}

#[pyfunction]
fn init_kaiming(n: usize, d: usize, r: usize, seed: u64) -> PyResult<(Rows, Rows)> {
    let (a, b) = lora::init_kaiming(n, d, r, &mut Rng::new(seed)).py()?;
    Ok((rows(&a), rows(&b)))
}

/// Frozen base plus a trainable low-rank product `a·b`.
#[pyclass(name = "LoraAdapter", skip_from_py_object)]
#[derive(Clone)]
struct PyLora {
    inner: CoreLora,
}

#[pymethods]
impl PyLora {
    #[new]
    fn new(w0: Rows, a: Rows, b: Rows) -> PyResult<Self> {
        Ok(PyLora {
            inner: CoreLora::new(mat(w0)?, mat(a)?, mat(b)?).py()?,
        })
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn a(&self) -> Rows {
        rows(self.inner.a())
    }

    #[getter]
    fn b(&self) -> Rows {
        rows(self.inner.b())
    }

    fn compose(&self) -> Rows {
        rows(&lora::compose_plain(&self.inner))
    }

    /// Factor gradients `(g·bᵀ, aᵀ·g)` for an effective-weight gradient.
    fn grad_factors(&self, g_w: Rows) -> PyResult<(Rows, Rows)> {
        let (da, db) = lora::grad_factors(&mat(g_w)?, &self.inner).py()?;
        Ok((rows(&da), rows(&db)))
    }

    #[pyo3(signature = (g_w, lr, weight_decay=0.0))]
    fn sgd_step(&self, g_w: Rows, lr: f64, weight_decay: f64) -> PyResult<PyLora> {
        let (da, db) = lora::grad_factors(&mat(g_w)?, &self.inner).py()?;
        Ok(PyLora {
            inner: lora::sgd_step_factors(&self.inner, &da, &db, lr, weight_decay).py()?,
        })
    }

    fn __repr__(&self) -> String {
        let (n, d) = self.inner.w0().shape();
        format!("LoraAdapter({n}x{d}, rank={})", self.inner.rank())
    }
}

/// Low-rank adapter whose delta is rescaled to l1 size `γᵃγᵇ`.
#[pyclass(name = "LargoState", skip_from_py_object)]
#[derive(Clone)]
struct PyLargo {
    inner: CoreLargo,
}

#[pymethods]
impl PyLargo {
    #[new]
    #[pyo3(signature = (w0, a, b, gamma_a, gamma_b, gamma_lr=1.0, norm_mode="entrywise", clamp_shrink_only=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        w0: Rows,
        a: Rows,
        b: Rows,
        gamma_a: f64,
        gamma_b: f64,
        gamma_lr: f64,
        norm_mode: &str,
        clamp_shrink_only: bool,
    ) -> PyResult<Self> {
        let ad = CoreLora::new(mat(w0)?, mat(a)?, mat(b)?).py()?;
        let gammas = GammaPair::new(gamma_a, gamma_b, gamma_lr).py()?;
        Ok(PyLargo {
            inner: CoreLargo::new(ad, gammas)
                .with_norm_mode(self::norm_mode(norm_mode)?)
                .with_clamp(clamp_shrink_only),
        })
    }

    #[getter]
    fn gamma_a(&self) -> f64 {
        self.inner.gammas.gamma_a
    }

    #[getter]
    fn gamma_b(&self) -> f64 {
        self.inner.gammas.gamma_b
    }

    #[getter]
    fn a(&self) -> Rows {
        rows(self.inner.adapter.a())
    }

    #[getter]
    fn b(&self) -> Rows {
        rows(self.inner.adapter.b())
    }

    fn scale_factor(&self) -> f64 {
        reg::scale_factor(&self.inner)
    }

    fn compose(&self) -> Rows {
        rows(&reg::compose_regulated(&self.inner))
    }

    fn delta(&self) -> Rows {
        rows(&reg::regulated_delta(&self.inner))
    }

    fn gamma_grads(&self, g_w: Rows) -> PyResult<(f64, f64)> {
        reg::gamma_grads(&mat(g_w)?, &self.inner).py()
    }

    #[pyo3(signature = (g_w, mode="regulated"))]
    fn factor_grads(&self, g_w: Rows, mode: &str) -> PyResult<(Rows, Rows)> {
        let (da, db) = reg::factor_grads(&mat(g_w)?, &self.inner, factor_mode(mode)?).py()?;
        Ok((rows(&da), rows(&db)))
    }

    /// One full iteration; `grad_at(w)` returns the loss gradient at effective weight `w`.
    #[pyo3(signature = (grad_at, lr, weight_decay=0.0, mode="regulated"))]
    fn step(&self, grad_at: Bound<'_, PyAny>, lr: f64, weight_decay: f64, mode: &str) -> PyResult<PyLargo> {
        let mode = factor_mode(mode)?;
        let g0 = call_grad(&grad_at, &reg::compose_regulated(&self.inner))?;
        let stepped = reg::factor_step(&self.inner, &g0, lr, weight_decay, mode).py()?;
        let g1 = call_grad(&grad_at, &reg::compose_regulated(&stepped))?;
        Ok(PyLargo {
            inner: reg::gamma_update(&stepped, &g1).py()?,
        })
    }

    fn __repr__(&self) -> String {
        let (n, d) = self.inner.adapter.w0().shape();
        format!(
            "LargoState({n}x{d}, rank={}, gamma_a={}, gamma_b={})",
            self.inner.adapter.rank(),
            self.inner.gammas.gamma_a,
            self.inner.gammas.gamma_b
        )
    }
}

fn call_grad(f: &Bound<'_, PyAny>, w: &Mat) -> PyResult<Mat> {
    let g: Rows = f.call1((rows(w),))?.extract()?;
    let g = mat(g)?;
    if g.shape() != w.shape() {
        return Err(PyValueError::new_err(format!(
            "gradient callback returned {:?}, expected {:?}",
            g.shape(),
            w.shape()
        )));
    }
    Ok(g)
}

/// One projected step on a dense matrix; returns `(w, gamma)`.
#[pyfunction]
#[pyo3(signature = (w, w0, gamma, gamma_lr, train_grad, val_grad_at, lr))]
fn tpgm_step(
    w: Rows,
    w0: Rows,
    gamma: f64,
    gamma_lr: f64,
    train_grad: Rows,
    val_grad_at: Bound<'_, PyAny>,
    lr: f64,
) -> PyResult<(Rows, f64)> {
    let st = tpgm::TpgmState::new(mat(w)?, mat(w0)?, gamma, gamma_lr).py()?;
    let mut failure = None;
    let next = tpgm::tpgm_step(
        &st,
        &mat(train_grad)?,
        |wt| match call_grad(&val_grad_at, wt) {
            Ok(g) => g,
            Err(e) => {
                failure.get_or_insert(e);
                Mat::zeros(wt.rows(), wt.cols())
            }
        },
        lr,
    )
    .py()?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((rows(&next.w), next.gamma))
}

/// The synthetic domain-shift benchmark.
#[pyclass(name = "Benchmark")]
struct PyBenchmark {
    spec: ShiftSpec,
    bundle: DatasetBundle,
}

impl PyBenchmark {
    fn split(&self, name: &str) -> PyResult<&Batch> {
        match name {
            "pretrain" => Ok(&self.bundle.pretrain),
            "id_train" => Ok(&self.bundle.id_train),
            "id_val" => Ok(&self.bundle.id_val),
            other => self
                .bundle
                .ood
                .iter()
                .find(|(n, _)| n == other)
                .map(|(_, b)| b)
                .ok_or_else(|| PyKeyError::new_err(format!("no split named {other:?}"))),
        }
    }
}

#[pymethods]
impl PyBenchmark {
    /// Keyword arguments override the default spec; `ood_domains` is a list of
    /// `(name, angle, noise_std, mask_fraction)` tuples.
    #[new]
    #[pyo3(signature = (seed=0, classes=None, input_dim=None, n_pretrain=None, n_id_train=None, n_id_val=None, n_ood=None, id_fraction=None, ood_domains=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        classes: Option<usize>,
        input_dim: Option<usize>,
        n_pretrain: Option<usize>,
        n_id_train: Option<usize>,
        n_id_val: Option<usize>,
        n_ood: Option<usize>,
        id_fraction: Option<f64>,
        ood_domains: Option<Vec<(String, f64, f64, f64)>>,
    ) -> PyResult<Self> {
        let d = ShiftSpec::default();
        let spec = ShiftSpec {
            seed,
            classes: classes.unwrap_or(d.classes),
            input_dim: input_dim.unwrap_or(d.input_dim),
            n_pretrain: n_pretrain.unwrap_or(d.n_pretrain),
            n_id_train: n_id_train.unwrap_or(d.n_id_train),
            n_id_val: n_id_val.unwrap_or(d.n_id_val),
            n_ood: n_ood.unwrap_or(d.n_ood),
            id_fraction: id_fraction.unwrap_or(d.id_fraction),
            ood_domains: match ood_domains {
                Some(v) => v
                    .into_iter()
                    .map(|(n, a, s, m)| ShiftDomain::new(n, a, s, m))
                    .collect(),
                None => d.ood_domains.clone(),
            },
            ..d
        };
        let bundle = generate(&spec).py()?;
        Ok(PyBenchmark { spec, bundle })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.spec.seed
    }

    #[getter]
    fn classes(&self) -> usize {
        self.spec.classes
    }

    fn split_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["pretrain", "id_train", "id_val"].map(String::from).to_vec();
        names.extend(self.bundle.ood.iter().map(|(n, _)| n.clone()));
        names
    }

    fn features(&self, split: &str) -> PyResult<Rows> {
        Ok(rows(&self.split(split)?.x))
    }

    fn labels(&self, split: &str) -> PyResult<Vec<usize>> {
        Ok(self.split(split)?.y.clone())
    }

    fn __len__(&self) -> usize {
        self.split_names().len()
    }
}

/// A trained classifier.
#[pyclass(name = "Model", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelState,
    method: String,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<PyModel> {
        let (inner, method) = checkpoint::load(std::path::Path::new(path)).py()?;
        Ok(PyModel { inner, method })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, &self.method, std::path::Path::new(path)).py()
    }

    #[getter]
    fn method(&self) -> String {
        self.method.clone()
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.layer_dims()
    }

    fn logits(&self, x: Rows) -> PyResult<Rows> {
        Ok(rows(&self.inner.forward(&mat(x)?).py()?))
    }

    fn accuracy(&self, bench: &PyBenchmark, split: &str) -> PyResult<f64> {
        self.inner.accuracy(bench.split(split)?).py()
    }
}

#[pyfunction]
#[pyo3(signature = (bench, epochs=20, lr=0.1, batch_size=64, hidden=vec![64, 64]))]
fn pretrain(bench: &PyBenchmark, epochs: usize, lr: f64, batch_size: usize, hidden: Vec<usize>) -> PyResult<PyModel> {
    let cfg = PretrainConfig {
        hidden,
        epochs,
        lr,
        batch_size,
        seed: bench.spec.seed,
        ..PretrainConfig::default()
    };
    let inner = train::pretrain(&cfg, &bench.bundle.pretrain, bench.spec.classes).py()?;
    Ok(PyModel {
        inner,
        method: "pretrained".into(),
    })
}

fn row_dict(r: &MetricsRow) -> HashMap<&'static str, PyObjectish> {
    use PyObjectish::*;
    HashMap::from([
        ("run_id", Str(r.run_id.clone())),
        ("method", Str(r.method.clone())),
        ("seed", Int(r.seed)),
        ("epoch", Int(r.epoch as u64)),
        ("split_name", Str(r.split_name.clone())),
        ("loss", Float(Some(r.loss))),
        ("accuracy", Float(Some(r.accuracy))),
        ("delta_l1", Float(Some(r.delta_l1))),
        ("gamma_a", Float(r.gamma_a)),
        ("gamma_b", Float(r.gamma_b)),
        ("trainable_params", Int(r.trainable_params as u64)),
        ("wall_ms", Int(r.wall_ms)),
    ])
}

#[derive(IntoPyObject)]
enum PyObjectish {
    Str(String),
    Int(u64),
    Float(Option<f64>),
}

/// Fine-tunes `base` with the given config keys; returns `(rows, model)`,
/// one dict per logged row.
#[pyfunction]
#[pyo3(signature = (base, bench, config=None))]
fn finetune(
    base: &PyModel,
    bench: &PyBenchmark,
    config: Option<HashMap<String, Bound<'_, PyAny>>>,
) -> PyResult<(Vec<HashMap<&'static str, PyObjectish>>, PyModel)> {
    let mut cfg = RunConfig::default();
    let mut keys: Vec<(String, Bound<'_, PyAny>)> = config.unwrap_or_default().into_iter().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0));
    for (k, v) in keys {
        let text = v.str()?.to_string();
        let text = match text.as_str() {
            "True" => "true".to_string(),
            "False" => "false".to_string(),
            _ => text,
        };
        cfg.set(&k, &text).py()?;
    }
    let out = train::train_run(&cfg, &bench.bundle, &base.inner).py()?;
    let rows = out.rows.iter().map(row_dict).collect();
    Ok((
        rows,
        PyModel {
            inner: out.model,
            method: cfg.method.to_string(),
        },
    ))
}

/// Runs the central-difference suite; returns `(checks, worst_name, worst_rel_err)`.
#[pyfunction]
#[pyo3(signature = (trials=10, seed=0))]
fn run_gradcheck(trials: usize, seed: u64) -> PyResult<(usize, String, f64)> {
    let r = gradcheck::run_suite(trials, seed).py()?;
    let worst = r
        .worst()
        .ok_or_else(|| PyValueError::new_err("trials must be >= 1"))?;
    Ok((r.checks.len(), worst.name.to_string(), worst.rel_err))
}

#[pymodule]
fn largo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLora>()?;
    m.add_class::<PyLargo>()?;
    m.add_class::<PyBenchmark>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(l1_entrywise, m)?)?;
    m.add_function(wrap_pyfunction!(max_abs_row_sum, m)?)?;
    m.add_function(wrap_pyfunction!(svd_top_r, m)?)?;
    m.add_function(wrap_pyfunction!(project_row, m)?)?;
    m.add_function(wrap_pyfunction!(project_mars, m)?)?;
    m.add_function(wrap_pyfunction!(compute_s_r, m)?)?;
    m.add_function(wrap_pyfunction!(init_svd, m)?)?;
    m.add_function(wrap_pyfunction!(init_kaiming, m)?)?;
    m.add_function(wrap_pyfunction!(tpgm_step, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    Ok(())
}
