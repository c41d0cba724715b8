//! The network model and its forward pass.

use crate::error::{Error, Result};
use crate::layer::{Layer, PAD};
use crate::tensor::Tensor;

/// An ordered stack of layers with a validated shape chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

/// Activations recorded during a forward pass.
///
/// `activations[l]` is the input of layer `l` and `activations[l + 1]` its
/// output, so adjacent entries chain by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn output_of(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    /// Final network output.
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds the network input")
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }
}

impl Network {
    /// Builds a network, running the shape chain over every layer.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        crate::tensor::checked_len(&input_shape)?;
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape.clone());
        for (index, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(index, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Input shape of layer `l`; `l == layers().len()` gives the output shape.
    pub fn shape_at(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(Layer::has_bias)
    }

    /// Replaces the parameters of layer `l`. Shapes cannot change.
    pub fn set_layer_params(&mut self, l: usize, values: &[f64]) -> Result<()> {
        let layer = &mut self.layers[l];
        if values.len() != layer.param_count() {
            return Err(Error::Layer {
                layer: l,
                message: format!(
                    "expected {} parameters, got {}",
                    layer.param_count(),
                    values.len()
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Layer {
                layer: l,
                message: "non-finite parameter".into(),
            });
        }
        layer.set_params(values);
        Ok(())
    }

    /// Replaces layer `l` by one with the same input and output shapes.
    pub fn replace_layer(&mut self, l: usize, layer: Layer) -> Result<()> {
        let out = layer.output_shape(l, &self.shapes[l])?;
        if out != self.shapes[l + 1] {
            return Err(Error::ShapeMismatch {
                layer: l,
                expected: self.shapes[l + 1].clone(),
                actual: out,
            });
        }
        self.layers[l] = layer;
        Ok(())
    }

    /// Runs the network on `x`, recording every intermediate activation.
    pub fn forward(&self, x: &Tensor) -> Result<ActivationTrace> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::InputShape {
                expected: self.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &activations[l];
            let out = apply(layer, input, &self.shapes[l + 1]);
            if out.first_non_finite().is_some() {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            activations.push(out);
        }
        Ok(ActivationTrace { activations })
    }

    /// Forward pass returning only the final output.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.output().clone())
    }
}

fn apply(layer: &Layer, input: &Tensor, out_shape: &[usize]) -> Tensor {
    let x = input.data();
    match layer {
        Layer::Dense(d) => {
            let n_in = d.inputs();
            let w = d.weight.data();
            let out = (0..d.outputs())
                .map(|j| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    row.iter().zip(x).map(|(w, a)| w * a).sum::<f64>() + d.bias[j]
                })
                .collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        Layer::Conv2d(c) => {
            let table = c.patch_table(input.shape());
            let taps = c.taps();
            let positions = out_shape[1] * out_shape[2];
            let k = c.kernel.data();
            let mut out = vec![0.0; c.out_channels() * positions];
            for oc in 0..c.out_channels() {
                let filter = &k[oc * taps..(oc + 1) * taps];
                for p in 0..positions {
                    let patch = &table[p * taps..(p + 1) * taps];
                    let mut acc = 0.0;
                    for (&idx, &w) in patch.iter().zip(filter) {
                        if idx != PAD {
                            acc += w * x[idx];
                        }
                    }
                    out[oc * positions + p] = acc + c.bias[oc];
                }
            }
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        Layer::MaxPool2d(p) => {
            let out = p
                .windows(input.shape())
                .iter()
                .map(|taps| x[taps[argmax(x, taps)]])
                .collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        Layer::Relu => Tensor::from_parts(out_shape.to_vec(), x.iter().map(|&v| v.max(0.0)).collect()),
        Layer::Flatten => Tensor::from_parts(out_shape.to_vec(), x.to_vec()),
    }
}

/// Position within `taps` of the largest value; ties go to the lowest position.
pub(crate) fn argmax(values: &[f64], taps: &[usize]) -> usize {
    let mut best = 0;
    for (pos, &idx) in taps.iter().enumerate().skip(1) {
        if values[idx] > values[taps[best]] {
            best = pos;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Conv2d, Dense, MaxPool2d};

    fn dense(w: Vec<f64>, shape: [usize; 2], b: Vec<f64>) -> Layer {
        Layer::Dense(Dense::new(Tensor::new(shape.to_vec(), w).unwrap(), b).unwrap())
    }

    #[test]
    fn identity_dense() {
        let net = Network::new(vec![2], vec![dense(vec![1.0, 0.0, 0.0, 1.0], [2, 2], vec![0.0, 0.0])]).unwrap();
        let out = net.predict(&Tensor::from_vec(vec![0.2, -0.5]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.2, -0.5]);
    }

    #[test]
    fn dense_hand_arithmetic() {
        let net = Network::new(vec![2], vec![dense(vec![1.0, 2.0, 3.0, 4.0], [2, 2], vec![0.0, 0.0])]).unwrap();
        let out = net.predict(&Tensor::from_vec(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let err = Network::new(
            vec![4],
            vec![dense(vec![0.0; 6], [3, 2], vec![0.0; 3])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { layer: 0, .. }));

        let err = Network::new(
            vec![2],
            vec![
                dense(vec![0.0; 6], [3, 2], vec![0.0; 3]),
                Layer::Relu,
                dense(vec![0.0; 4], [1, 4], vec![0.0]),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { layer: 2, .. }));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = Network::new(vec![2], vec![Layer::Relu]).unwrap();
        assert!(matches!(
            net.forward(&Tensor::from_vec(vec![1.0; 3]).unwrap()),
            Err(Error::InputShape { .. })
        ));
    }

    #[test]
    fn overflow_is_rejected_as_non_finite() {
        let net = Network::new(
            vec![1],
            vec![dense(vec![1e300], [1, 1], vec![0.0]), dense(vec![1e300], [1, 1], vec![0.0])],
        )
        .unwrap();
        let err = net.forward(&Tensor::from_vec(vec![10.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteActivation { layer: 1 }));
    }

    #[test]
    fn relu_and_flatten() {
        let net = Network::new(vec![1, 2, 2], vec![Layer::Relu, Layer::Flatten]).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![-1.0, 2.0, -0.0, 3.0]).unwrap();
        let trace = net.forward(&x).unwrap();
        assert_eq!(trace.output_of(0).data(), &[0.0, 2.0, 0.0, 3.0]);
        assert_eq!(trace.output().shape(), &[4]);
        assert_eq!(trace.output().data(), trace.output_of(0).data());
    }

    #[test]
    fn conv_and_pool_by_hand() {
        // 1x3x3 input, 2x2 all-ones kernel, stride 1: sums of each 2x2 block.
        let conv = Conv2d::new(Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(), vec![0.5], 1, 0).unwrap();
        let pool = MaxPool2d::new((2, 2), 1).unwrap();
        let net = Network::new(vec![1, 3, 3], vec![Layer::Conv2d(conv), Layer::MaxPool2d(pool)]).unwrap();
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let trace = net.forward(&x).unwrap();
        assert_eq!(trace.output_of(0).data(), &[12.5, 16.5, 24.5, 28.5]);
        assert_eq!(trace.output().data(), &[28.5]);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[2.0, 2.0, 1.0, 1.0], &[0, 1, 2, 3]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 2.0, 0.0], &[0, 1, 2, 3]), 1);
    }
}
