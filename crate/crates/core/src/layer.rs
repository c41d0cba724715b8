//! Layer definitions and shape algebra.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Marker in a patch table for a tap that falls into zero padding.
pub(crate) const PAD: usize = usize::MAX;

/// Fully connected layer. `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// 2-D convolution over `channels × height × width` inputs.
/// `kernel` is `out_channels × in_channels × kh × kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernel: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Relu,
    Flatten,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        let layer = Self { weight, bias };
        layer.check(0)?;
        Ok(layer)
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check(&self, layer: usize) -> Result<()> {
        if self.weight.shape().len() != 2 {
            return Err(Error::Layer {
                layer,
                message: format!("dense weight must be 2-D, got {:?}", self.weight.shape()),
            });
        }
        if self.bias.len() != self.outputs() {
            return Err(Error::Layer {
                layer,
                message: format!(
                    "dense bias has {} entries for {} outputs",
                    self.bias.len(),
                    self.outputs()
                ),
            });
        }
        check_finite(layer, &self.bias)
    }
}

impl Conv2d {
    pub fn new(kernel: Tensor, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        let layer = Self {
            kernel,
            bias,
            stride,
            padding,
        };
        layer.check(0)?;
        Ok(layer)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    /// Number of taps per output neuron: `in_channels · kh · kw`.
    pub fn taps(&self) -> usize {
        let (kh, kw) = self.kernel_size();
        self.in_channels() * kh * kw
    }

    fn check(&self, layer: usize) -> Result<()> {
        if self.kernel.shape().len() != 4 {
            return Err(Error::Layer {
                layer,
                message: format!("conv kernel must be 4-D, got {:?}", self.kernel.shape()),
            });
        }
        if self.bias.len() != self.out_channels() {
            return Err(Error::Layer {
                layer,
                message: format!(
                    "conv bias has {} entries for {} output channels",
                    self.bias.len(),
                    self.out_channels()
                ),
            });
        }
        if self.stride < 1 {
            return Err(Error::Layer {
                layer,
                message: "conv stride must be at least 1".into(),
            });
        }
        check_finite(layer, &self.bias)
    }

    /// Patch table for an input of shape `[c, h, w]`: for every output spatial
    /// position (row-major), the flat input index of each tap in
    /// `in_channel, ky, kx` order, or [`PAD`] for taps in the padding.
    pub(crate) fn patch_table(&self, in_shape: &[usize]) -> Vec<usize> {
        let (h, w) = (in_shape[1], in_shape[2]);
        let (kh, kw) = self.kernel_size();
        let oh = conv_extent(h, kh, self.stride, self.padding).expect("validated geometry");
        let ow = conv_extent(w, kw, self.stride, self.padding).expect("validated geometry");
        let pad = self.padding as isize;
        let mut table = Vec::with_capacity(oh * ow * self.taps());
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..self.in_channels() {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                table.push(PAD);
                            } else {
                                table.push((c * h + iy as usize) * w + ix as usize);
                            }
                        }
                    }
                }
            }
        }
        table
    }
}

impl MaxPool2d {
    pub fn new(window: (usize, usize), stride: usize) -> Result<Self> {
        let pool = Self { window, stride };
        pool.check(0)?;
        Ok(pool)
    }

    fn check(&self, layer: usize) -> Result<()> {
        if self.stride < 1 || self.window.0 < 1 || self.window.1 < 1 {
            return Err(Error::Layer {
                layer,
                message: "max-pool window and stride must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Flat input indices of every pooling window, windows in row-major
    /// `channel, oy, ox` order, taps in row-major `ky, kx` order.
    pub(crate) fn windows(&self, in_shape: &[usize]) -> Vec<Vec<usize>> {
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (kh, kw) = self.window;
        let oh = conv_extent(h, kh, self.stride, 0).expect("validated geometry");
        let ow = conv_extent(w, kw, self.stride, 0).expect("validated geometry");
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut taps = Vec::with_capacity(kh * kw);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            taps.push((ch * h + oy * self.stride + ky) * w + ox * self.stride + kx);
                        }
                    }
                    out.push(taps);
                }
            }
        }
        out
    }
}

/// Output extent of a strided window: `floor((n + 2·pad − k) / stride) + 1`.
pub fn conv_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    /// True when any bias entry is nonzero.
    pub fn has_bias(&self) -> bool {
        match self {
            Layer::Dense(d) => d.bias.iter().any(|&b| b != 0.0),
            Layer::Conv2d(c) => c.bias.iter().any(|&b| b != 0.0),
            _ => false,
        }
    }

    /// Validates internal consistency and returns the output shape for the
    /// given input shape. `index` is the layer position used in errors.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                d.check(index)?;
                let expected = vec![d.inputs()];
                if input != expected.as_slice() {
                    return Err(Error::ShapeMismatch {
                        layer: index,
                        expected,
                        actual: input.to_vec(),
                    });
                }
                Ok(vec![d.outputs()])
            }
            Layer::Conv2d(c) => {
                c.check(index)?;
                if input.len() != 3 || input[0] != c.in_channels() {
                    return Err(Error::ShapeMismatch {
                        layer: index,
                        expected: vec![c.in_channels(), 0, 0],
                        actual: input.to_vec(),
                    });
                }
                let (kh, kw) = c.kernel_size();
                let oh = conv_extent(input[1], kh, c.stride, c.padding);
                let ow = conv_extent(input[2], kw, c.stride, c.padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![c.out_channels(), oh, ow]),
                    _ => Err(Error::Layer {
                        layer: index,
                        message: format!("kernel {kh}x{kw} does not fit input {input:?}"),
                    }),
                }
            }
            Layer::MaxPool2d(p) => {
                p.check(index)?;
                if input.len() != 3 {
                    return Err(Error::ShapeMismatch {
                        layer: index,
                        expected: vec![0, 0, 0],
                        actual: input.to_vec(),
                    });
                }
                let oh = conv_extent(input[1], p.window.0, p.stride, 0);
                let ow = conv_extent(input[2], p.window.1, p.stride, 0);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![input[0], oh, ow]),
                    _ => Err(Error::Layer {
                        layer: index,
                        message: format!("pool window {:?} does not fit input {input:?}", p.window),
                    }),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Number of trainable scalars (weights then biases).
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Conv2d(c) => c.kernel.len() + c.bias.len(),
            _ => 0,
        }
    }

    /// Weights then biases, row-major.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Layer::Dense(d) => d.weight.data().iter().chain(&d.bias).copied().collect(),
            Layer::Conv2d(c) => c.kernel.data().iter().chain(&c.bias).copied().collect(),
            _ => Vec::new(),
        }
    }

    /// Inverse of [`Layer::params`]; `values.len()` must equal `param_count`.
    pub fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count(), "parameter count mismatch");
        let (w, b) = match self {
            Layer::Dense(d) => (d.weight.data_mut(), &mut d.bias),
            Layer::Conv2d(c) => (c.kernel.data_mut(), &mut c.bias),
            _ => return,
        };
        let split = w.len();
        w.copy_from_slice(&values[..split]);
        b.copy_from_slice(&values[split..]);
    }
}

fn check_finite(layer: usize, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Layer {
            layer,
            message: "non-finite parameter".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alexnet_style_first_layer_extent() {
        let conv = Conv2d::new(Tensor::zeros(vec![96, 3, 7, 7]).unwrap(), vec![0.0; 96], 4, 0).unwrap();
        let out = Layer::Conv2d(conv).output_shape(0, &[3, 227, 227]).unwrap();
        assert_eq!(out, vec![96, 56, 56]);
    }

    #[test]
    fn dense_rejects_inconsistent_bias() {
        assert!(Dense::new(Tensor::zeros(vec![3, 2]).unwrap(), vec![0.0; 2]).is_err());
    }

    #[test]
    fn conv_rejects_zero_stride() {
        assert!(Conv2d::new(Tensor::zeros(vec![1, 1, 2, 2]).unwrap(), vec![0.0], 0, 0).is_err());
    }

    #[test]
    fn patch_table_marks_padding() {
        let conv = Conv2d::new(Tensor::zeros(vec![1, 1, 3, 3]).unwrap(), vec![0.0], 1, 1).unwrap();
        let table = conv.patch_table(&[1, 2, 2]);
        // 2x2 outputs, 9 taps each; top-left output sees input (0,0) at tap (1,1).
        assert_eq!(table.len(), 4 * 9);
        assert_eq!(&table[..9], &[PAD, PAD, PAD, PAD, 0, 1, PAD, 2, 3]);
    }

    proptest! {
        #[test]
        fn conv_extent_matches_formula(
            h in 1usize..40, w in 1usize..40, k in 1usize..8,
            stride in 1usize..5, pad in 0usize..4, ic in 1usize..4, oc in 1usize..4,
        ) {
            let conv = Conv2d::new(Tensor::zeros(vec![oc, ic, k, k]).unwrap(), vec![0.0; oc], stride, pad).unwrap();
            let res = Layer::Conv2d(conv.clone()).output_shape(0, &[ic, h, w]);
            if k <= h + 2 * pad && k <= w + 2 * pad {
                let out = res.unwrap();
                prop_assert_eq!(out, vec![oc, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1]);
                let table = conv.patch_table(&[ic, h, w]);
                prop_assert_eq!(table.len(), ((h + 2 * pad - k) / stride + 1) * ((w + 2 * pad - k) / stride + 1) * ic * k * k);
            } else {
                prop_assert!(res.is_err());
            }
        }

        #[test]
        fn pool_extent_matches_formula(h in 1usize..30, w in 1usize..30, kh in 1usize..5, kw in 1usize..5, stride in 1usize..4) {
            let pool = MaxPool2d::new((kh, kw), stride).unwrap();
            let res = Layer::MaxPool2d(pool).output_shape(0, &[2, h, w]);
            if kh <= h && kw <= w {
                prop_assert_eq!(res.unwrap(), vec![2, (h - kh) / stride + 1, (w - kw) / stride + 1]);
            } else {
                prop_assert!(res.is_err());
            }
        }
    }
}
