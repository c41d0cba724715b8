//! Transfer retraining with SGD and Nesterov momentum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::{loss_and_gradients, scalar_output, Gradients};
use crate::data::{split_dataset, to_rating_units, LabeledDataset};
use crate::error::{Error, Result};
use crate::layer::{Dense, Layer};
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Only fully connected layers are updated.
    DenseOnly,
    /// Every parameterized layer is updated.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep every bias at its starting value.
    #[serde(default)]
    pub freeze_biases: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            mode: TrainMode::DenseOnly,
            epochs: 30,
            batch_size: 10,
            seed: 0,
            freeze_biases: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mae: f64,
    pub test_mae: Option<f64>,
}

/// One entry per completed epoch; MAE in rating units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub epochs: Vec<EpochStats>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mae,test_mae\n");
        for e in &self.epochs {
            let test = e.test_mae.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_mae, test));
        }
        out
    }
}

/// One Nesterov step in lookahead form:
/// `g = ∇L(θ + μv)`, `v ← μv − ηg`, `θ ← θ + v`.
pub fn sgd_nesterov_step(
    params: &mut [f64],
    velocity: &mut [f64],
    mut grad_fn: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    assert_eq!(params.len(), velocity.len(), "params and velocity differ in length");
    let lookahead: Vec<f64> = params
        .iter()
        .zip(velocity.iter())
        .map(|(p, v)| p + momentum * v)
        .collect();
    let grad = grad_fn(&lookahead)?;
    assert_eq!(grad.len(), params.len(), "gradient length mismatch");
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
    Ok(())
}

/// Indices of the layers a mode updates.
pub fn trainable_layers(net: &Network, mode: TrainMode) -> Vec<usize> {
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| match mode {
            TrainMode::DenseOnly => matches!(l, Layer::Dense(_)),
            TrainMode::Full => l.has_params(),
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn gather_params(net: &Network, layers: &[usize]) -> Vec<f64> {
    layers.iter().flat_map(|&l| net.layers()[l].params()).collect()
}

pub fn scatter_params(net: &mut Network, layers: &[usize], flat: &[f64]) -> Result<()> {
    let mut offset = 0;
    for &l in layers {
        let n = net.layers()[l].param_count();
        net.set_layer_params(l, &flat[offset..offset + n])?;
        offset += n;
    }
    Ok(())
}

pub fn gather_grads(grads: &Gradients, layers: &[usize]) -> Vec<f64> {
    layers.iter().flat_map(|&l| grads.layers[l].iter().copied()).collect()
}

/// Marks the bias entries of the flat parameter vector built by [`gather_params`].
fn bias_mask(net: &Network, layers: &[usize]) -> Vec<bool> {
    let mut mask = Vec::new();
    for &l in layers {
        let layer = &net.layers()[l];
        let n_bias = match layer {
            Layer::Dense(d) => d.bias.len(),
            Layer::Conv2d(c) => c.bias.len(),
            _ => 0,
        };
        mask.extend((0..layer.param_count()).map(|i| i + n_bias >= layer.param_count()));
    }
    mask
}

/// Mean loss and mean gradient over a batch.
pub fn batch_gradients(net: &Network, batch: &[(&Tensor, f64)]) -> Result<(f64, Gradients)> {
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (x, t) in batch {
        let (l, g) = loss_and_gradients(net, x, *t)?;
        loss += l * scale;
        total.add_scaled(&g, scale);
    }
    Ok((loss, total))
}

/// Mean absolute error in rating units (`[0, 1]` error × 8).
pub fn mae(net: &Network, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Dataset("MAE of an empty dataset".into()));
    }
    let mut total = 0.0;
    for s in ds.items() {
        let y = scalar_output(net, &net.forward(&s.image)?)?;
        total += (y - s.target).abs();
    }
    Ok(to_rating_units(total / ds.len() as f64))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub curve: LearningCurve,
}

/// Splits `ds` 50/50 with the config seed and retrains on the first half.
pub fn train(net: &Network, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (train_set, test_set) = split_dataset(ds, cfg.seed)?;
    fit(net, &train_set, Some(&test_set), cfg)
}

/// Retrains `net` on `train_set`, recording train (and optional test) MAE
/// after every epoch.
pub fn fit(
    net: &Network,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let mut net = net.clone();
    let layers = trainable_layers(&net, cfg.mode);
    let mut params = gather_params(&net, &layers);
    let mut velocity = vec![0.0; params.len()];
    let frozen = if cfg.freeze_biases { bias_mask(&net, &layers) } else { vec![false; params.len()] };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = LearningCurve::default();

    for epoch in 1..=cfg.epochs {
        let diverged = |e: Error| Error::Diverged {
            epoch,
            message: e.to_string(),
        };
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Tensor, f64)> = chunk
                .iter()
                .map(|&i| (&train_set.items()[i].image, train_set.items()[i].target))
                .collect();
            let mut probe = net.clone();
            sgd_nesterov_step(
                &mut params,
                &mut velocity,
                |point| {
                    scatter_params(&mut probe, &layers, point)?;
                    let (loss, g) = batch_gradients(&probe, &batch)?;
                    if !loss.is_finite() {
                        return Err(Error::Config(format!("loss is {loss}")));
                    }
                    let mut flat = gather_grads(&g, &layers);
                    for (v, &f) in flat.iter_mut().zip(&frozen) {
                        if f {
                            *v = 0.0;
                        }
                    }
                    Ok(flat)
                },
                cfg.learning_rate,
                cfg.momentum,
            )
            .map_err(diverged)?;
            scatter_params(&mut net, &layers, &params).map_err(diverged)?;
        }
        let train_mae = mae(&net, train_set).map_err(diverged)?;
        let test_mae = match test_set {
            Some(t) if !t.is_empty() => Some(mae(&net, t).map_err(diverged)?),
            _ => None,
        };
        curve.epochs.push(EpochStats {
            epoch,
            train_mae,
            test_mae,
        });
    }
    Ok(TrainOutcome { net, curve })
}

/// Seeded uniform initialization in `[−r, r]`, `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, count: usize, rng: &mut impl Rng) -> Vec<f64> {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| rng.gen_range(-r..=r)).collect()
}

/// Reinitializes the last dense layer (the regression head) with
/// [`glorot_uniform`] weights and zero biases.
pub fn replace_head(net: &Network, seed: u64) -> Result<Network> {
    let l = net
        .layers()
        .iter()
        .rposition(|l| matches!(l, Layer::Dense(_)))
        .ok_or_else(|| Error::Config("network has no dense head to replace".into()))?;
    let Layer::Dense(head) = &net.layers()[l] else {
        unreachable!()
    };
    let (n_in, n_out) = (head.inputs(), head.outputs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let w = glorot_uniform(n_in, n_out, n_in * n_out, &mut rng);
    let layer = Layer::Dense(Dense::new(Tensor::new(vec![n_out, n_in], w)?, vec![0.0; n_out])?);
    let mut out = net.clone();
    out.replace_layer(l, layer)?;
    Ok(out)
}
