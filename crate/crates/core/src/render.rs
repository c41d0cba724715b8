//! Heatmap rendering with a symmetric blue-white-red colormap.
//!
//! Relevance is pooled over color channels by summation, normalized to
//! `r̂ ∈ [−1, 1]` and mapped through a three-stop piecewise-linear table:
//!
//! | r̂   | R   | G   | B   |
//! |------|-----|-----|-----|
//! | −1   | 0   | 0   | 255 |
//! | 0    | 255 | 255 | 255 |
//! | +1   | 255 | 0   | 0   |
//!
//! With `m = round(255·(1 − |r̂|))` a pixel is `(255, m, m)` for `r̂ ≥ 0` and
//! `(m, m, 255)` otherwise, so negating a map exactly swaps red and blue.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NEUTRAL: [u8; 3] = [255, 255, 255];
pub const POSITIVE: [u8; 3] = [255, 0, 0];
pub const NEGATIVE: [u8; 3] = [0, 0, 255];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the largest absolute pixel relevance of this map.
    MaxAbs,
    /// Divide by a fixed positive scale (values beyond it saturate), so
    /// different images share one color scale.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub normalization: Normalization,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            normalization: Normalization::MaxAbs,
        }
    }
}

/// Color for a normalized relevance `r̂`, clamped to `[−1, 1]`.
pub fn colormap(r: f64) -> [u8; 3] {
    let r = r.clamp(-1.0, 1.0);
    let m = (255.0 * (1.0 - r.abs())).round() as u8;
    if r >= 0.0 {
        [255, m, m]
    } else {
        [m, m, 255]
    }
}

/// Sums a `C × H × W` relevance tensor over channels; `H × W` passes through.
pub fn pool_channels(rel: &Tensor) -> Result<Tensor> {
    match *rel.shape() {
        [_, _] => Ok(rel.clone()),
        [c, h, w] => {
            let src = rel.data();
            let mut out = vec![0.0; h * w];
            for ch in 0..c {
                for (o, v) in out.iter_mut().zip(&src[ch * h * w..(ch + 1) * h * w]) {
                    *o += v;
                }
            }
            Ok(Tensor::from_parts(vec![h, w], out))
        }
        _ => Err(Error::Config(format!(
            "heatmaps need a C x H x W or H x W relevance tensor, got {:?}",
            rel.shape()
        ))),
    }
}

/// Renders an input-layer relevance tensor as an RGB image of the same
/// spatial size.
pub fn render(rel: &Tensor, cfg: &RenderConfig) -> Result<RgbImage> {
    let pixels = pool_channels(rel)?;
    let divisor = match cfg.normalization {
        Normalization::MaxAbs => pixels.data().iter().fold(0.0f64, |m, v| m.max(v.abs())),
        Normalization::Fixed(scale) => {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::Config(format!("fixed scale must be positive, got {scale}")));
            }
            scale
        }
    };
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, &r) in pixels.data().iter().enumerate() {
        let color = if divisor == 0.0 { NEUTRAL } else { colormap(r / divisor) };
        img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(color));
    }
    Ok(img)
}

/// Blends `heat` over `background` with weight `alpha` on the heatmap.
pub fn overlay(heat: &RgbImage, background: &RgbImage, alpha: f64) -> Result<RgbImage> {
    if heat.dimensions() != background.dimensions() {
        return Err(Error::Config("overlay images differ in size".into()));
    }
    let a = alpha.clamp(0.0, 1.0);
    let mut out = heat.clone();
    for (o, (h, b)) in out.pixels_mut().zip(heat.pixels().zip(background.pixels())) {
        for c in 0..3 {
            o.0[c] = (a * f64::from(h.0[c]) + (1.0 - a) * f64::from(b.0[c])).round() as u8;
        }
    }
    Ok(out)
}

/// Places images left to right, top-aligned, on a white canvas.
pub fn side_by_side(images: &[&RgbImage]) -> RgbImage {
    let width = images.iter().map(|i| i.width()).sum();
    let height = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let mut out = RgbImage::from_pixel(width, height, Rgb(NEUTRAL));
    let mut x0 = 0;
    for img in images {
        for (x, y, p) in img.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *p);
        }
        x0 += img.width();
    }
    out
}

/// Binary PPM (P6) encoding.
pub fn to_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_raw());
    out
}

pub fn to_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(vec![h, w], v).unwrap()
    }

    #[test]
    fn zero_map_is_neutral() {
        let img = render(&Tensor::zeros(vec![3, 4, 5]).unwrap(), &RenderConfig::default()).unwrap();
        assert_eq!(img.dimensions(), (5, 4));
        assert!(img.pixels().all(|p| p.0 == NEUTRAL));
    }

    #[test]
    fn single_positive_pixel_hits_endpoint() {
        let mut v = vec![0.0; 6];
        v[4] = 0.3;
        let img = render(&map(2, 3, v), &RenderConfig::default()).unwrap();
        assert_eq!(img.get_pixel(1, 1).0, POSITIVE);
        assert_eq!(img.pixels().filter(|p| p.0 == NEUTRAL).count(), 5);
    }

    #[test]
    fn channels_are_summed() {
        let rel = Tensor::new(vec![3, 1, 2], vec![1.0, 0.0, 1.0, 0.0, -2.0, 0.0]).unwrap();
        let pooled = pool_channels(&rel).unwrap();
        assert_eq!(pooled.data(), &[0.0, 0.0]);
    }

    #[test]
    fn fixed_scale_validated_and_saturates() {
        assert!(render(&map(1, 1, vec![1.0]), &RenderConfig { normalization: Normalization::Fixed(0.0) }).is_err());
        let img = render(&map(1, 2, vec![5.0, -0.5]), &RenderConfig { normalization: Normalization::Fixed(1.0) }).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, POSITIVE);
        assert_eq!(img.get_pixel(1, 0).0, [128, 128, 255]);
    }

    #[test]
    fn ppm_header() {
        let img = RgbImage::from_pixel(2, 1, Rgb([1, 2, 3]));
        assert_eq!(to_ppm(&img), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03".to_vec());
    }

    #[test]
    fn side_by_side_layout() {
        let a = RgbImage::from_pixel(2, 2, Rgb([0, 0, 0]));
        let b = RgbImage::from_pixel(1, 1, Rgb([9, 9, 9]));
        let out = side_by_side(&[&a, &b]);
        assert_eq!(out.dimensions(), (3, 2));
        assert_eq!(out.get_pixel(2, 0).0, [9, 9, 9]);
        assert_eq!(out.get_pixel(2, 1).0, NEUTRAL);
    }

    proptest! {
        #[test]
        fn negation_swaps_red_and_blue(v in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let pos = render(&map(3, 4, v.clone()), &RenderConfig::default()).unwrap();
            let neg = render(&map(3, 4, v.iter().map(|x| -x).collect()), &RenderConfig::default()).unwrap();
            for (p, n) in pos.pixels().zip(neg.pixels()) {
                prop_assert_eq!(p.0, [n.0[2], n.0[1], n.0[0]]);
            }
        }

        #[test]
        fn colors_are_monotone(a in -1.5f64..1.5, b in -1.5f64..1.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (cl, ch) = (colormap(lo), colormap(hi));
            // Redness R − B never decreases, and on each side the pale
            // channels move monotonically away from (or toward) white.
            prop_assert!(i32::from(ch[0]) - i32::from(ch[2]) >= i32::from(cl[0]) - i32::from(cl[2]));
            if lo >= 0.0 { prop_assert!(ch[1] <= cl[1]); }
            if hi < 0.0 { prop_assert!(ch[1] >= cl[1]); }
        }

        #[test]
        fn fixed_scale_is_image_independent(r in -2.0f64..2.0, other in -50.0f64..50.0) {
            let cfg = RenderConfig { normalization: Normalization::Fixed(2.0) };
            let a = render(&map(1, 2, vec![r, 0.0]), &cfg).unwrap();
            let b = render(&map(1, 2, vec![r, other]), &cfg).unwrap();
            prop_assert_eq!(a.get_pixel(0, 0), b.get_pixel(0, 0));
        }
    }
}
