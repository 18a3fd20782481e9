//! Method registry, training loop and sweeps.

mod config;
mod pretrain;
mod sweep;

pub use config::{
    cosine_lr, fmt_float, GammaBatch, GammaEvery, InitMode, Method, RunConfig, Schedule, CONFIG_KEYS,
};
pub use pretrain::{fit_softmax_regression, pretrain, PretrainConfig};
pub use sweep::{run_id, sweep, DataSource};

use std::time::Instant;

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::largo::{self, GammaPair, LargoState};
use crate::linalg::{l1_entrywise, Mat, Rng};
use crate::lora::{self, LoraAdapter};
use crate::model::{Batch, Grads, Layer, LayerWeight, ModelState};
use crate::projection::project_mars_with_scales;
use crate::tpgm;

/// One logged evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub split_name: String,
    pub loss: f64,
    pub accuracy: f64,
    /// Entrywise l1 norm of the deviation from the pretrained weights,
    /// summed over the non-head layers.
    pub delta_l1: f64,
    /// Layer means of the regulated radii; `None` for other methods.
    pub gamma_a: Option<f64>,
    pub gamma_b: Option<f64>,
    pub trainable_params: usize,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub const FIELDS: [&'static str; 12] = [
        "run_id",
        "method",
        "seed",
        "epoch",
        "split_name",
        "loss",
        "accuracy",
        "delta_l1",
        "gamma_a",
        "gamma_b",
        "trainable_params",
        "wall_ms",
    ];
}

/// Constraint bookkeeping at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub epoch: usize,
    pub delta_l1: f64,
    /// `Σ γᵃγᵇ` over regulated layers, or `Σ γ` for projected methods.
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub model: ModelState,
    pub trace: Vec<TracePoint>,
    /// Per-layer projection radii after training (projected methods only).
    pub radii: Vec<f64>,
    /// Optimizer steps after which a regulated layer exceeded `γᵃγᵇ`.
    pub bound_violations: usize,
}

/// Trains `pretrained` with `cfg` and returns the logged rows.
pub fn run_method(cfg: &RunConfig, bundle: &DatasetBundle, pretrained: &ModelState) -> Result<Vec<MetricsRow>> {
    Ok(train_run(cfg, bundle, pretrained)?.rows)
}

/// Splits the ID training set into the part used for gradient steps and a
/// held-out slice for radius updates.
pub fn split_id_train(cfg: &RunConfig, id_train: &Batch) -> (Batch, Option<Batch>) {
    let root = Rng::new(cfg.seed);
    let mut kept = id_train.clone();
    if cfg.id_fraction < 1.0 {
        let n = ((cfg.id_fraction * id_train.len() as f64).ceil() as usize).clamp(1, id_train.len());
        let mut idx = root.fork(3).permutation(id_train.len());
        idx.truncate(n);
        idx.sort_unstable();
        kept = id_train.select(&idx);
    }
    if !needs_val_slice(cfg) {
        return (kept, None);
    }
    let n = kept.len();
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let perm = root.fork(2).permutation(n);
    let mut val_idx = perm[..n_val].to_vec();
    let mut train_idx = perm[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    (kept.select(&train_idx), Some(kept.select(&val_idx)))
}

fn needs_val_slice(cfg: &RunConfig) -> bool {
    match cfg.method {
        Method::Tpgm | Method::TpgmLora => true,
        Method::Largo => cfg.gamma_batch == GammaBatch::Val,
        _ => false,
    }
}

/// All layers as dense effective weights.
fn flatten(ms: &ModelState) -> ModelState {
    ModelState {
        activation: ms.activation,
        layers: ms
            .layers
            .iter()
            .map(|l| Layer {
                weight: LayerWeight::Dense(l.weight.effective()),
                bias: l.bias.clone(),
            })
            .collect(),
    }
}

/// Wraps the non-head layers of a dense model for `cfg.method`.
pub fn prepare_model(cfg: &RunConfig, pretrained: &ModelState) -> Result<ModelState> {
    let mut ms = flatten(pretrained);
    if !cfg.method.is_low_rank() {
        return Ok(ms);
    }
    let mut rng = Rng::new(cfg.seed).fork(1);
    let head = ms.head_index();
    for (l, layer) in ms.layers.iter_mut().enumerate().take(head) {
        let (out, inp) = layer.weight.shape();
        if cfg.rank > out.min(inp) {
            return Err(Error::param(format!(
                "rank {} exceeds min dimension {} of layer {l}",
                cfg.rank,
                out.min(inp)
            )));
        }
        let w0 = layer.weight.base().clone();
        let ad = match cfg.resolved_init() {
            InitMode::Svd => LoraAdapter::svd(w0, cfg.rank, cfg.svd_scalar, cfg.svd_norm_mode)?,
            _ => LoraAdapter::kaiming(w0, cfg.rank, &mut rng)?,
        };
        layer.weight = match cfg.method {
            Method::Largo => {
                let gammas = GammaPair::new(cfg.gamma_init, cfg.gamma_init, cfg.gamma_lr)?;
                LayerWeight::Largo(
                    LargoState::new(ad, gammas)
                        .with_norm_mode(cfg.norm_mode)
                        .with_clamp(cfg.clamp_shrink_only),
                )
            }
            _ => LayerWeight::Lora(ad),
        };
    }
    Ok(ms)
}

/// Number of scalars updated by training under `method`.
pub fn trainable_params(ms: &ModelState, method: Method) -> usize {
    let head = ms.head_index();
    let mut total = 0;
    for (l, layer) in ms.layers.iter().enumerate() {
        let (out, inp) = layer.weight.shape();
        if l == head {
            total += out * inp + out;
            continue;
        }
        total += match (method, &layer.weight) {
            (Method::LinearProbe, _) => 0,
            (_, LayerWeight::Dense(_)) => out * inp + out,
            (_, LayerWeight::Lora(ad)) => ad.trainable_params() + out,
            (_, LayerWeight::Largo(st)) => st.trainable_params() + out,
        };
        if matches!(method, Method::Tpgm | Method::TpgmLora) {
            total += 1;
        }
    }
    total
}

/// Deviation from the anchor, per non-head layer, in the method's own
/// parameterization.
fn layer_deltas(ms: &ModelState, anchors: &[Mat]) -> Result<Vec<f64>> {
    let head = ms.head_index();
    ms.layers[..head]
        .iter()
        .zip(anchors)
        .map(|(layer, w0)| match &layer.weight {
            LayerWeight::Dense(w) => l1_entrywise(&w.sub(w0)?),
            LayerWeight::Lora(ad) => l1_entrywise(&ad.delta()),
            LayerWeight::Largo(st) => l1_entrywise(&largo::regulated_delta(st)),
        })
        .collect()
}

fn largo_layers(ms: &ModelState) -> impl Iterator<Item = &LargoState> {
    ms.layers.iter().filter_map(|l| match &l.weight {
        LayerWeight::Largo(st) => Some(st),
        _ => None,
    })
}

fn sgd_bias(bias: &mut [f64], g: &[f64], lr: f64, wd: f64) {
    for (b, gv) in bias.iter_mut().zip(g) {
        *b -= lr * (gv + wd * *b);
    }
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    model: ModelState,
    anchors: Vec<Mat>,
    radii: Vec<f64>,
    val: Option<Batch>,
    bound_violations: usize,
}

impl Trainer<'_> {
    fn head(&self) -> usize {
        self.model.head_index()
    }

    /// Plain SGD on the head and every trained bias.
    fn step_head_and_biases(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        let wd = self.cfg.weight_decay;
        let head = self.head();
        for (l, layer) in self.model.layers.iter_mut().enumerate() {
            if l == head || self.cfg.method != Method::LinearProbe {
                sgd_bias(&mut layer.bias, &grads.biases[l], lr, wd);
            }
        }
        if let LayerWeight::Dense(w) = &mut self.model.layers[head].weight {
            *w = lora::sgd(w, &grads.weights[head], lr, wd)?;
        }
        Ok(())
    }

    fn step(&mut self, batch: &Batch, lr: f64) -> Result<()> {
        let cfg = self.cfg;
        let wd = cfg.weight_decay;
        let (_, grads) = self.model.loss_and_grads(batch)?;
        let head = self.head();
        self.step_head_and_biases(&grads, lr)?;
        for l in 0..head {
            let g = &grads.weights[l];
            let layer = &mut self.model.layers[l];
            layer.weight = match (&layer.weight, cfg.method) {
                (_, Method::LinearProbe) => continue,
                (LayerWeight::Dense(w), _) => LayerWeight::Dense(lora::sgd(w, g, lr, wd)?),
                (LayerWeight::Lora(ad), _) => {
                    let (da, db) = lora::grad_factors(g, ad)?;
                    LayerWeight::Lora(lora::sgd_step_factors(ad, &da, &db, lr, wd)?)
                }
                (LayerWeight::Largo(st), _) => {
                    LayerWeight::Largo(largo::factor_step(st, g, lr, wd, cfg.factor_grad_mode)?)
                }
            };
        }
        match cfg.method {
            Method::Tpgm | Method::TpgmLora => self.project()?,
            Method::Largo if cfg.gamma_every == GammaEvery::Step => {
                let gamma_batch = match &self.val {
                    Some(v) => v.clone(),
                    None => batch.clone(),
                };
                self.update_radii(&gamma_batch)?;
            }
            _ => {}
        }
        if cfg.method == Method::Largo {
            self.count_violations();
        }
        Ok(())
    }

    /// Radius step for every regulated layer from a gradient at the current
    /// composition.
    fn update_radii(&mut self, data: &Batch) -> Result<()> {
        let (_, grads) = self.model.loss_and_grads(data)?;
        for (layer, g) in self.model.layers.iter_mut().zip(&grads.weights) {
            if let LayerWeight::Largo(st) = &layer.weight {
                layer.weight = LayerWeight::Largo(largo::gamma_update(st, g)?);
            }
        }
        Ok(())
    }

    fn count_violations(&mut self) {
        for st in largo_layers(&self.model) {
            let delta = l1_entrywise(&largo::regulated_delta(st)).unwrap_or(0.0);
            if delta > st.gammas.product() {
                self.bound_violations += 1;
            }
        }
    }

    /// Projects every non-head layer onto its ball, moves the radii along
    /// the validation gradient of the projected network, and re-projects.
    #[allow(clippy::needless_range_loop)]
    fn project(&mut self) -> Result<()> {
        let head = self.head();
        let val = self.val.as_ref().expect("projected methods hold out a slice");
        let w_hat: Vec<Mat> = self.model.layers[..head]
            .iter()
            .map(|l| l.weight.effective())
            .collect();
        let mut probe = self.model.clone();
        let mut row_info = Vec::with_capacity(head);
        for l in 0..head {
            let (w_tilde, rows) = project_mars_with_scales(&self.anchors[l], &w_hat[l], self.radii[l])?;
            probe.layers[l].weight = LayerWeight::Dense(w_tilde);
            row_info.push(rows);
        }
        let (_, g_val) = probe.loss_and_grads(val)?;
        for l in 0..head {
            let d_gamma = tpgm::radius_gradient(&self.anchors[l], &w_hat[l], &row_info[l], &g_val.weights[l])?;
            self.radii[l] = tpgm::radius_step(self.radii[l], self.cfg.gamma_lr, d_gamma);
            let (w_new, rows) = project_mars_with_scales(&self.anchors[l], &w_hat[l], self.radii[l])?;
            let layer = &mut self.model.layers[l];
            layer.weight = match &layer.weight {
                LayerWeight::Lora(ad) => LayerWeight::Lora(tpgm::refactor_projected(ad, &w_new, &rows)?),
                _ => LayerWeight::Dense(w_new),
            };
        }
        Ok(())
    }

    fn gamma_means(&self) -> (Option<f64>, Option<f64>) {
        let gs: Vec<&GammaPair> = largo_layers(&self.model).map(|st| &st.gammas).collect();
        if gs.is_empty() {
            return (None, None);
        }
        let n = gs.len() as f64;
        (
            Some(gs.iter().map(|g| g.gamma_a).sum::<f64>() / n),
            Some(gs.iter().map(|g| g.gamma_b).sum::<f64>() / n),
        )
    }

    fn bound(&self) -> f64 {
        match self.cfg.method {
            Method::Largo => largo_layers(&self.model).map(|st| st.gammas.product()).sum(),
            Method::Tpgm | Method::TpgmLora => self.radii.iter().sum(),
            _ => f64::INFINITY,
        }
    }
}

/// Trains one configuration and returns rows, final model and constraint trace.
pub fn train_run(cfg: &RunConfig, bundle: &DatasetBundle, pretrained: &ModelState) -> Result<RunOutcome> {
    cfg.check()?;
    if pretrained.input_dim() != bundle.input_dim() || pretrained.classes() != bundle.classes() {
        return Err(Error::dim(format!(
            "model maps {} -> {} but data has {} features and {} classes",
            pretrained.input_dim(),
            pretrained.classes(),
            bundle.input_dim(),
            bundle.classes()
        )));
    }
    if pretrained.layers.len() < 2 {
        return Err(Error::param("fine-tuning needs a hidden layer below the head"));
    }
    let start = Instant::now();
    let run_id = run_id(cfg);
    let (train, val) = split_id_train(cfg, &bundle.id_train);
    if train.is_empty() {
        return Err(Error::param("no training samples left after splitting"));
    }
    let model = prepare_model(cfg, pretrained)?;
    let head = model.head_index();
    let anchors: Vec<Mat> = model.layers[..head].iter().map(|l| l.weight.base().clone()).collect();
    let radii = if cfg.method.uses_radius() && cfg.method != Method::Largo {
        vec![cfg.gamma_init; head]
    } else {
        Vec::new()
    };
    let params = trainable_params(&model, cfg.method);
    let mut tr = Trainer {
        cfg,
        model,
        anchors,
        radii,
        val,
        bound_violations: 0,
    };

    let mut splits: Vec<(&str, &Batch)> = vec![("id_train", &train), ("id_val", &bundle.id_val)];
    splits.extend(bundle.ood.iter().map(|(n, b)| (n.as_str(), b)));
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    let mut log = |tr: &Trainer, epoch: usize| -> Result<()> {
        let delta = layer_deltas(&tr.model, &tr.anchors)?.iter().sum::<f64>();
        let (ga, gb) = tr.gamma_means();
        let wall_ms = if cfg.record_wall_ms {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        for (name, batch) in &splits {
            let (loss, accuracy) = tr.model.evaluate(batch)?;
            rows.push(MetricsRow {
                run_id: run_id.clone(),
                method: cfg.method.to_string(),
                seed: cfg.seed,
                epoch,
                split_name: name.to_string(),
                loss,
                accuracy,
                delta_l1: delta,
                gamma_a: ga,
                gamma_b: gb,
                trainable_params: params,
                wall_ms,
            });
        }
        trace.push(TracePoint {
            epoch,
            delta_l1: delta,
            bound: tr.bound(),
        });
        Ok(())
    };

    let mut shuffler = Rng::new(cfg.seed).fork(4);
    for epoch in 0..cfg.epochs {
        log(&tr, epoch)?;
        let lr = cfg.lr_at(epoch);
        let order = shuffler.permutation(train.len());
        for chunk in order.chunks(cfg.batch_size) {
            tr.step(&train.select(chunk), lr)?;
        }
        if cfg.method == Method::Largo && cfg.gamma_every == GammaEvery::Epoch {
            let data = tr.val.clone().unwrap_or_else(|| train.clone());
            tr.update_radii(&data)?;
            tr.count_violations();
        }
        if !tr.model.effective_weights().iter().all(Mat::all_finite) {
            return Err(Error::numeric(format!("non-finite weights after epoch {epoch}")));
        }
    }
    log(&tr, cfg.epochs)?;
    Ok(RunOutcome {
        rows,
        model: tr.model,
        trace,
        radii: tr.radii,
        bound_violations: tr.bound_violations,
    })
}
