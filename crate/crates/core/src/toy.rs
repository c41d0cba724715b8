//! Synthetic brightness task and a small base ConvNet, so everything runs
//! without external data.
//!
//! Each image is a Gaussian blob of random position, width, intensity and
//! tint over faint noise. Its rating is `1 + 8·min(mean / 0.25, 1)`, where
//! `mean` is the mean 8-bit-quantized pixel value in `[0, 1]`.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{hwc_to_chw, rgb8_to_hwc, LabeledDataset, Sample};
use crate::error::Result;
use crate::layer::{Conv2d, Dense, Layer, MaxPool2d};
use crate::network::Network;
use crate::tensor::Tensor;
use crate::train::{fit, glorot_uniform, TrainConfig, TrainMode};

pub const TOY_SIZE: usize = 16;
pub const TOY_SAMPLES: usize = 200;
pub const TOY_ATTRIBUTE: &str = "brightness";
/// Mean brightness that maps to the top rating.
pub const BRIGHTNESS_SCALE: f64 = 0.25;

/// Draws one blob image of `size × size` pixels.
pub fn blob_image(size: usize, rng: &mut impl Rng) -> RgbImage {
    let s = size as f64;
    let cx = rng.gen_range(0.15 * s..0.85 * s);
    let cy = rng.gen_range(0.15 * s..0.85 * s);
    let sigma = rng.gen_range(0.08 * s..0.2 * s);
    let intensity = rng.gen_range(0.3..1.0);
    let tint: [f64; 3] = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
            let g = intensity * (-d2 / (2.0 * sigma * sigma)).exp();
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = (g * tint[c] + rng.gen_range(0.0..0.04)).clamp(0.0, 1.0);
                px[c] = (v * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Rating of an image under the toy brightness task.
pub fn brightness_score(img: &RgbImage) -> f64 {
    let raw = img.as_raw();
    let mean = raw.iter().map(|&v| f64::from(v)).sum::<f64>() / (raw.len() as f64 * 255.0);
    1.0 + 8.0 * (mean / BRIGHTNESS_SCALE).min(1.0)
}

/// `n` seeded blob images with their brightness ratings.
pub fn toy_images(n: usize, size: usize, seed: u64) -> Vec<(RgbImage, f64)> {
    labeled_images(n, size, seed, brightness_score)
}

fn labeled_images(n: usize, size: usize, seed: u64, score: fn(&RgbImage) -> f64) -> Vec<(RgbImage, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let img = blob_image(size, &mut rng);
            let s = score(&img);
            (img, s)
        })
        .collect()
}

pub fn image_file_name(i: usize) -> String {
    format!("img_{i:04}.png")
}

/// The toy images as an in-memory dataset (network layout `3 × H × W`).
pub fn toy_dataset(n: usize, size: usize, seed: u64) -> Result<LabeledDataset> {
    to_dataset(toy_images(n, size, seed))
}

fn to_dataset(images: Vec<(RgbImage, f64)>) -> Result<LabeledDataset> {
    let items = images
        .into_iter()
        .enumerate()
        .map(|(i, (img, score))| Sample::new(image_file_name(i), hwc_to_chw(&rgb8_to_hwc(&img)), score))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset::new(items))
}

fn f32_exact(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|v| f64::from(v as f32)).collect()
}

/// Small base network for `3 × size × size` inputs (`size` divisible by 4):
/// conv3x3(3→4) · relu · pool2 · conv3x3(4→8) · relu · pool2 · flatten ·
/// dense(→16) · relu · dense(→1).
///
/// Weights are Glorot-uniform, rounded to `f32` so the model survives a
/// save/load roundtrip bit for bit. With `bias` unset all biases are zero.
pub fn base_model(size: usize, seed: u64, bias: bool) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = |ic: usize, oc: usize, rng: &mut ChaCha8Rng| -> Result<Layer> {
        let w = f32_exact(glorot_uniform(ic * 9, oc * 9, oc * ic * 9, rng));
        let b = if bias { f32_exact((0..oc).map(|_| rng.gen_range(0.0..0.05)).collect()) } else { vec![0.0; oc] };
        Ok(Layer::Conv2d(Conv2d::new(Tensor::new(vec![oc, ic, 3, 3], w)?, b, 1, 1)?))
    };
    let c1 = conv(3, 4, &mut rng)?;
    let c2 = conv(4, 8, &mut rng)?;
    let flat = 8 * (size / 4) * (size / 4);
    let dense = |n_in: usize, n_out: usize, rng: &mut ChaCha8Rng| -> Result<Layer> {
        let w = f32_exact(glorot_uniform(n_in, n_out, n_in * n_out, rng));
        let b = if bias { f32_exact((0..n_out).map(|_| rng.gen_range(0.0..0.05)).collect()) } else { vec![0.0; n_out] };
        Ok(Layer::Dense(Dense::new(Tensor::new(vec![n_out, n_in], w)?, b)?))
    };
    let d1 = dense(flat, 16, &mut rng)?;
    let d2 = dense(16, 1, &mut rng)?;
    let pool = || Layer::MaxPool2d(MaxPool2d { window: (2, 2), stride: 2 });
    Network::new(
        vec![3, size, size],
        vec![c1, Layer::Relu, pool(), c2, Layer::Relu, pool(), Layer::Flatten, d1, Layer::Relu, d2],
    )
}

/// Pretraining settings for the base model: full training on the brightness
/// task, on images drawn from a seed stream separate from the target data.
pub const PRETRAIN_SAMPLES: usize = 200;
pub const PRETRAIN_EPOCHS: usize = 40;
pub const PRETRAIN_LR: f64 = 0.01;

/// [`base_model`] pretrained on a disjoint draw of brightness images, with
/// its parameters rounded to `f32`. Without `bias` the biases stay zero.
pub fn pretrained_base(size: usize, seed: u64, bias: bool) -> Result<Network> {
    let init = base_model(size, seed, bias)?;
    let aux = to_dataset(labeled_images(PRETRAIN_SAMPLES, size, seed ^ 0x005e_ed0f_ba5e, brightness_score))?;
    let cfg = TrainConfig {
        learning_rate: PRETRAIN_LR,
        mode: TrainMode::Full,
        epochs: PRETRAIN_EPOCHS,
        seed,
        freeze_biases: !bias,
        ..TrainConfig::default()
    };
    let mut net = fit(&init, &aux, None, &cfg)?.net;
    for l in 0..net.layers().len() {
        let p = f32_exact(net.layers()[l].params());
        net.set_layer_params(l, &p)?;
    }
    Ok(net)
}

/// Shape of the networks drawn by [`random_network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomKind {
    /// Dense layers with ReLU between them.
    Dense,
    /// Convolutions (with ReLU and optional max-pooling), then flatten and
    /// dense layers.
    Conv,
}

/// Draws a network with `linear_layers` dense/conv layers (at least 2),
/// weights uniform in `[−1, 1]` rounded to `f32`, and zero biases unless
/// `bias` is set. The final layer is dense with 1–3 outputs and no ReLU.
pub fn random_network(rng: &mut impl Rng, kind: RandomKind, linear_layers: usize, bias: bool) -> Result<Network> {
    assert!(linear_layers >= 2, "need at least two linear layers");
    let weights = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..n).map(|_| f64::from(rng.gen_range(-1.0f32..=1.0))).collect()
    };
    let biases = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
        if bias {
            (0..n).map(|_| f64::from(rng.gen_range(-0.5f32..=0.5))).collect()
        } else {
            vec![0.0; n]
        }
    };
    let mut layers = Vec::new();
    let mut shape: Vec<usize>;
    let input_shape;
    let mut remaining = linear_layers;
    match kind {
        RandomKind::Dense => {
            input_shape = vec![rng.gen_range(2..=8)];
            shape = input_shape.clone();
        }
        RandomKind::Conv => {
            let c = rng.gen_range(1..=3);
            input_shape = vec![c, rng.gen_range(5..=9), rng.gen_range(5..=9)];
            shape = input_shape.clone();
            let convs = rng.gen_range(1..linear_layers);
            for _ in 0..convs {
                let (ic, h, w) = (shape[0], shape[1], shape[2]);
                let oc = rng.gen_range(1..=4);
                let k = rng.gen_range(1..=3.min(h).min(w));
                let stride = rng.gen_range(1..=2);
                let pad = rng.gen_range(0..=1);
                let kernel = Tensor::new(vec![oc, ic, k, k], weights(oc * ic * k * k, rng))?;
                let conv = Layer::Conv2d(Conv2d::new(kernel, biases(oc, rng), stride, pad)?);
                shape = conv.output_shape(layers.len(), &shape)?;
                layers.push(conv);
                layers.push(Layer::Relu);
                if shape[1] >= 2 && shape[2] >= 2 && rng.gen_bool(0.5) {
                    let pool = Layer::MaxPool2d(MaxPool2d::new((2, 2), rng.gen_range(1..=2))?);
                    shape = pool.output_shape(layers.len(), &shape)?;
                    layers.push(pool);
                }
                remaining -= 1;
            }
            layers.push(Layer::Flatten);
            shape = vec![shape.iter().product()];
        }
    }
    for i in 0..remaining {
        let n_in = shape[0];
        let last = i + 1 == remaining;
        let n_out = if last { rng.gen_range(1..=3) } else { rng.gen_range(2..=8) };
        let w = Tensor::new(vec![n_out, n_in], weights(n_out * n_in, rng))?;
        layers.push(Layer::Dense(Dense::new(w, biases(n_out, rng))?));
        if !last {
            layers.push(Layer::Relu);
        }
        shape = vec![n_out];
    }
    Network::new(input_shape, layers)
}

/// Uniform random input in `[lo, hi]` for `net`.
pub fn random_input(net: &Network, rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    let n = net.input_shape().iter().product();
    Tensor::from_parts(net.input_shape().to_vec(), (0..n).map(|_| rng.gen_range(lo..=hi)).collect())
}
