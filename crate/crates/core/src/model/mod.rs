//! A small multilayer perceptron with hand-written backpropagation.
//!
//! Layer weights are stored `out x in` and applied as `h·Wᵀ + b`. Hidden
//! layers use the configured activation; the last layer emits logits.
//! Adapted layers carry a low-rank adapter and contribute their effective
//! weight to the forward pass; gradients are always reported with respect
//! to that effective weight.

pub mod checkpoint;

use crate::error::{Error, Result};
use crate::largo::{self, LargoState};
use crate::linalg::{matmul, matmul_nt, matmul_tn, rand_normal, Mat, Rng};
use crate::lora::{self, LoraAdapter};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `h = f(z)`.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Architecture of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// `input, hidden..., classes`.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// Indices of linear layers that receive adapters; never the head.
    pub adapted_layers: Vec<usize>,
}

impl MlpSpec {
    /// Every layer except the classification head is adapted.
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::param("an mlp needs at least two linear layers"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::param("layer widths must be positive"));
        }
        let adapted_layers = (0..layer_dims.len() - 2).collect();
        Ok(MlpSpec {
            layer_dims,
            activation,
            adapted_layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn head_index(&self) -> usize {
        self.num_layers() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_dims.last().expect("validated nonempty")
    }
}

/// How a layer's weight is parameterized.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeight {
    Dense(Mat),
    Lora(LoraAdapter),
    Largo(LargoState),
}

impl LayerWeight {
    /// The matrix used in the forward pass.
    pub fn effective(&self) -> Mat {
        match self {
            LayerWeight::Dense(w) => w.clone(),
            LayerWeight::Lora(ad) => lora::compose_plain(ad),
            LayerWeight::Largo(st) => largo::compose_regulated(st),
        }
    }

    /// The pretrained matrix an adapter is anchored to, or the dense weight.
    pub fn base(&self) -> &Mat {
        match self {
            LayerWeight::Dense(w) => w,
            LayerWeight::Lora(ad) => ad.w0(),
            LayerWeight::Largo(st) => st.adapter.w0(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.base().shape()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: LayerWeight,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

/// Labelled samples, one row of `x` per label.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Mat,
    pub y: Vec<usize>,
}

impl Batch {
    pub fn new(x: Mat, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dim(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        Ok(Batch { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Batch {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.y.iter().find(|&&c| c >= classes) {
            Some(c) => Err(Error::param(format!("label {c} outside [0, {classes})"))),
            None => Ok(()),
        }
    }
}

/// Gradients with respect to each layer's effective weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl ModelState {
    /// Random dense network: `N(0, 1/in)` weights (doubled variance for relu),
    /// zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        let gain = match spec.activation {
            Activation::Tanh => 1.0,
            Activation::Relu => 2.0,
        };
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| {
                let (inp, out) = (w[0], w[1]);
                Ok(Layer {
                    weight: LayerWeight::Dense(rand_normal(rng, out, inp, (gain / inp as f64).sqrt())?),
                    bias: vec![0.0; out],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelState {
            activation: spec.activation,
            layers,
        })
    }

    pub fn from_layers(activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("model needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (out, inp) = layer.weight.shape();
            if layer.bias.len() != out {
                return Err(Error::dim(format!(
                    "layer {l}: bias has {} entries for {out} outputs",
                    layer.bias.len()
                )));
            }
            if l > 0 && layers[l - 1].weight.shape().0 != inp {
                return Err(Error::dim(format!(
                    "layer {l} expects {inp} inputs but layer {} emits {}",
                    l - 1,
                    layers[l - 1].weight.shape().0
                )));
            }
        }
        Ok(ModelState { activation, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape().1
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("nonempty").weight.shape().0
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.shape().0));
        dims
    }

    pub fn head_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn effective_weights(&self) -> Vec<Mat> {
        self.layers.iter().map(|l| l.weight.effective()).collect()
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Inputs to every layer followed by the logits.
    fn forward_cached(&self, weights: &[Mat], x: &Mat) -> Result<Vec<Mat>> {
        let mut acts = Vec::with_capacity(weights.len() + 1);
        acts.push(x.clone());
        for (l, (w, layer)) in weights.iter().zip(&self.layers).enumerate() {
            let mut z = matmul_nt(acts.last().expect("nonempty"), w)?;
            let last = l + 1 == weights.len();
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                    if !last {
                        *v = self.activation.apply(*v);
                    }
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let weights = self.effective_weights();
        Ok(self.forward_cached(&weights, x)?.pop().expect("nonempty"))
    }

    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Grads)> {
        if batch.is_empty() {
            return Err(Error::param("loss of an empty batch"));
        }
        self.check_input(&batch.x)?;
        batch.check_labels(self.classes())?;
        let weights = self.effective_weights();
        let acts = self.forward_cached(&weights, &batch.x)?;
        let logits = acts.last().expect("nonempty");
        let probs = softmax_rows(logits);
        let n = batch.len() as f64;

        let mut loss = 0.0;
        let mut dz = probs;
        for (i, &y) in batch.y.iter().enumerate() {
            loss -= log_softmax_at(logits.row(i), y);
            dz.set(i, y, dz.get(i, y) - 1.0);
        }
        loss /= n;
        let mut dz = dz.scale(1.0 / n);

        let depth = weights.len();
        let mut gw = vec![Mat::zeros(0, 0); depth];
        let mut gb = vec![Vec::new(); depth];
        for l in (0..depth).rev() {
            let h = &acts[l];
            gw[l] = matmul_tn(&dz, h)?;
            gb[l] = (0..dz.cols())
                .map(|j| (0..dz.rows()).map(|i| dz.get(i, j)).sum())
                .collect();
            if l > 0 {
                let mut dh = matmul(&dz, &weights[l])?;
                for (d, &hv) in dh.data_mut().iter_mut().zip(h.data()) {
                    *d *= self.activation.derivative_from_output(hv);
                }
                dz = dh;
            }
        }
        Ok((
            loss,
            Grads {
                weights: gw,
                biases: gb,
            },
        ))
    }

    /// Mean cross-entropy and accuracy in one forward pass.
    pub fn evaluate(&self, batch: &Batch) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::param("evaluation on an empty batch"));
        }
        batch.check_labels(self.classes())?;
        let logits = self.forward(&batch.x)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (i, &y) in batch.y.iter().enumerate() {
            let row = logits.row(i);
            loss -= log_softmax_at(row, y);
            if argmax(row) == y {
                correct += 1;
            }
        }
        let n = batch.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    pub fn accuracy(&self, data: &Batch) -> Result<f64> {
        Ok(self.evaluate(data)?.1)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row[k] - lse
}

pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
