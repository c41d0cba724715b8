//! Analytic gradients for every layer kind, plus central finite
//! differences for checking them.

use crate::error::{Error, Result};
use crate::layer::{Layer, PAD};
use crate::network::{argmax, ActivationTrace, Network};
use crate::tensor::Tensor;

/// Parameter gradients per layer (weights then biases, matching
/// [`Layer::params`]; empty for parameter-free layers) and the gradient with
/// respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers().iter().map(|l| vec![0.0; l.param_count()]).collect(),
            input: vec![0.0; net.input_shape().iter().product()],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += factor * y;
        }
    }
}

/// Backpropagates `grad_output` (dLoss/dOutput) through a recorded trace.
pub fn backward(net: &Network, trace: &ActivationTrace, grad_output: &[f64]) -> Result<Gradients> {
    if grad_output.len() != trace.output().len() || trace.len() != net.layers().len() {
        return Err(Error::TraceMismatch("gradient does not match trace".into()));
    }
    let mut layers = vec![Vec::new(); net.layers().len()];
    let mut delta = grad_output.to_vec();
    for (l, layer) in net.layers().iter().enumerate().rev() {
        let x = trace.input(l).data();
        let mut dx = vec![0.0; x.len()];
        match layer {
            Layer::Dense(d) => {
                let n = d.inputs();
                let w = d.weight.data();
                let mut g = vec![0.0; layer.param_count()];
                let (gw, gb) = g.split_at_mut(w.len());
                for (j, &dj) in delta.iter().enumerate() {
                    gb[j] = dj;
                    let row = &w[j * n..(j + 1) * n];
                    for i in 0..n {
                        gw[j * n + i] = dj * x[i];
                        dx[i] += row[i] * dj;
                    }
                }
                layers[l] = g;
            }
            Layer::Conv2d(c) => {
                let table = c.patch_table(trace.input(l).shape());
                let taps = c.taps();
                let out_shape = trace.output_of(l).shape();
                let positions = out_shape[1] * out_shape[2];
                let k = c.kernel.data();
                let mut g = vec![0.0; layer.param_count()];
                let (gk, gb) = g.split_at_mut(k.len());
                for oc in 0..c.out_channels() {
                    let filter = &k[oc * taps..(oc + 1) * taps];
                    let gfilter = &mut gk[oc * taps..(oc + 1) * taps];
                    for p in 0..positions {
                        let dj = delta[oc * positions + p];
                        if dj == 0.0 {
                            continue;
                        }
                        gb[oc] += dj;
                        let patch = &table[p * taps..(p + 1) * taps];
                        for t in 0..taps {
                            let idx = patch[t];
                            if idx != PAD {
                                gfilter[t] += dj * x[idx];
                                dx[idx] += filter[t] * dj;
                            }
                        }
                    }
                }
                layers[l] = g;
            }
            Layer::MaxPool2d(p) => {
                for (w, taps) in p.windows(trace.input(l).shape()).iter().enumerate() {
                    dx[taps[argmax(x, taps)]] += delta[w];
                }
            }
            Layer::Relu => {
                for i in 0..x.len() {
                    if x[i] > 0.0 {
                        dx[i] = delta[i];
                    }
                }
            }
            Layer::Flatten => dx.copy_from_slice(&delta),
        }
        delta = dx;
    }
    Ok(Gradients { layers, input: delta })
}

/// Squared error `½(y − target)²` on a single-output network.
pub fn squared_error(net: &Network, x: &Tensor, target: f64) -> Result<f64> {
    let y = scalar_output(net, &net.forward(x)?)?;
    Ok(0.5 * (y - target).powi(2))
}

/// Loss and its analytic gradient for one sample.
pub fn loss_and_gradients(net: &Network, x: &Tensor, target: f64) -> Result<(f64, Gradients)> {
    let trace = net.forward(x)?;
    let y = scalar_output(net, &trace)?;
    let residual = y - target;
    let grads = backward(net, &trace, &[residual])?;
    Ok((0.5 * residual * residual, grads))
}

pub(crate) fn scalar_output(net: &Network, trace: &ActivationTrace) -> Result<f64> {
    match trace.output().data() {
        [y] => Ok(*y),
        _ => Err(Error::Config(format!(
            "regression needs a single output, network produces {:?}",
            net.output_shape()
        ))),
    }
}

/// Central finite-difference derivative of `loss` with respect to parameter
/// `index` of layer `layer`.
pub fn finite_difference(
    net: &Network,
    layer: usize,
    index: usize,
    step: f64,
    loss: impl Fn(&Network) -> Result<f64>,
) -> Result<f64> {
    let base = net.layers()[layer].params();
    let mut probe = net.clone();
    let mut shifted = base.clone();
    shifted[index] = base[index] + step;
    probe.set_layer_params(layer, &shifted)?;
    let up = loss(&probe)?;
    shifted[index] = base[index] - step;
    probe.set_layer_params(layer, &shifted)?;
    let down = loss(&probe)?;
    Ok((up - down) / (2.0 * step))
}

/// Relative error used for gradient checks: `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Dense;

    #[test]
    fn single_dense_gradient_by_hand() {
        let w = Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap();
        let net = Network::new(vec![2], vec![Layer::Dense(Dense::new(w, vec![0.5]).unwrap())]).unwrap();
        let x = Tensor::from_vec(vec![1.0, 3.0]).unwrap();
        // y = 2 - 3 + 0.5 = -0.5; residual vs target 0.5 is -1.
        let (loss, g) = loss_and_gradients(&net, &x, 0.5).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(g.layers[0], vec![-1.0, -3.0, -1.0]);
        assert_eq!(g.input, vec![-2.0, 1.0]);
    }

    #[test]
    fn multi_output_is_rejected() {
        let net = Network::new(vec![2], vec![Layer::Relu]).unwrap();
        assert!(squared_error(&net, &Tensor::from_vec(vec![1.0, 2.0]).unwrap(), 0.0).is_err());
    }
}
