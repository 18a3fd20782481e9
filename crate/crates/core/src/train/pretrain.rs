use crate::error::{Error, Result};
use crate::linalg::{Mat, Rng};
use crate::lora;
use crate::model::{Activation, Batch, Layer, LayerWeight, MlpSpec, ModelState};

use super::config::cosine_lr;

/// Dense training of the base network on the pretraining mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 20,
            lr: 0.1,
            batch_size: 64,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Trains a fresh network with plain SGD and a cosine schedule.
pub fn pretrain(cfg: &PretrainConfig, data: &Batch, classes: usize) -> Result<ModelState> {
    if data.is_empty() {
        return Err(Error::param("pretraining data is empty"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::param("pretraining needs batch_size >= 1 and lr > 0"));
    }
    let mut dims = vec![data.x.cols()];
    dims.extend(&cfg.hidden);
    dims.push(classes);
    let spec = MlpSpec::new(dims, cfg.activation)?;
    let root = Rng::new(cfg.seed);
    let mut ms = ModelState::init(&spec, &mut root.fork(10))?;
    let mut shuffler = root.fork(11);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let order = shuffler.permutation(data.len());
        for chunk in order.chunks(cfg.batch_size) {
            let (_, grads) = ms.loss_and_grads(&data.select(chunk))?;
            for (l, layer) in ms.layers.iter_mut().enumerate() {
                if let LayerWeight::Dense(w) = &mut layer.weight {
                    *w = lora::sgd(w, &grads.weights[l], lr, cfg.weight_decay)?;
                }
                for (b, g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
                    *b -= lr * (g + cfg.weight_decay * *b);
                }
            }
        }
    }
    Ok(ms)
}

/// Multinomial logistic regression fitted by full-batch gradient descent.
/// The result is a single-layer model.
pub fn fit_softmax_regression(data: &Batch, classes: usize, steps: usize, lr: f64) -> Result<ModelState> {
    let d = data.x.cols();
    let mut ms = ModelState::from_layers(
        Activation::Tanh,
        vec![Layer {
            weight: LayerWeight::Dense(Mat::zeros(classes, d)),
            bias: vec![0.0; classes],
        }],
    )?;
    for _ in 0..steps {
        let (_, grads) = ms.loss_and_grads(data)?;
        let layer = &mut ms.layers[0];
        if let LayerWeight::Dense(w) = &mut layer.weight {
            *w = w.add_scaled(-lr, &grads.weights[0])?;
        }
        for (b, g) in layer.bias.iter_mut().zip(&grads.biases[0]) {
            *b -= lr * g;
        }
    }
    Ok(ms)
}
