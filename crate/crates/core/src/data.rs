//! Labeled image datasets, score rescaling and image/tensor conversion.

use std::collections::BTreeSet;
use std::path::Path;

use image::{imageops::FilterType, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 9.0;
const SCORE_SPAN: f64 = SCORE_MAX - SCORE_MIN;

/// Maps a rating in `[1, 9]` linearly onto `[0, 1]`.
pub fn rescale_score(raw: f64) -> Result<f64> {
    if !(SCORE_MIN..=SCORE_MAX).contains(&raw) {
        return Err(Error::ScoreRange(raw));
    }
    Ok((raw - SCORE_MIN) / SCORE_SPAN)
}

/// Inverse of [`rescale_score`], for reporting in rating units.
pub fn unscale_score(scaled: f64) -> f64 {
    scaled * SCORE_SPAN + SCORE_MIN
}

/// Converts an error on the `[0, 1]` scale into rating points.
pub fn to_rating_units(scaled_error: f64) -> f64 {
    scaled_error * SCORE_SPAN
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    /// Network input, `channels × height × width`.
    pub image: Tensor,
    pub raw_score: f64,
    pub target: f64,
}

impl Sample {
    pub fn new(name: impl Into<String>, image: Tensor, raw_score: f64) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            image,
            raw_score,
            target: rescale_score(raw_score)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    items: Vec<Sample>,
}

impl LabeledDataset {
    pub fn new(items: Vec<Sample>) -> Self {
        Self { items }
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Seeded shuffle, then the first `⌈n/2⌉` samples train and the rest test.
pub fn split_dataset(ds: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if ds.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 samples to split, got {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ds.len().div_ceil(2);
    let pick = |idx: &[usize]| LabeledDataset::new(idx.iter().map(|&i| ds.items[i].clone()).collect());
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    filename: String,
    attribute: String,
    raw_score: f64,
}

/// Reads `labels` (CSV with `filename,attribute,raw_score`) and the images
/// it names from `dir`, resizing each to the network's input size.
///
/// When `attribute` is `None` the CSV must hold exactly one attribute.
pub fn load_dataset(
    dir: &Path,
    labels: &Path,
    attribute: Option<&str>,
    input_shape: &[usize],
) -> Result<LabeledDataset> {
    let mut reader = csv::Reader::from_path(labels).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(labels, io),
        other => Error::Dataset(format!("{}: {other:?}", labels.display())),
    })?;
    let rows = reader
        .deserialize::<LabelRow>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let attrs: BTreeSet<&str> = rows.iter().map(|r| r.attribute.as_str()).collect();
    let wanted = match attribute {
        Some(a) => {
            if !attrs.contains(a) {
                return Err(Error::Dataset(format!("attribute {a:?} not present in labels")));
            }
            a.to_string()
        }
        None if attrs.len() == 1 => attrs.iter().next().unwrap().to_string(),
        None => {
            return Err(Error::Dataset(format!(
                "labels hold several attributes {attrs:?}; pick one"
            )))
        }
    };
    let mut items = Vec::new();
    for row in rows.iter().filter(|r| r.attribute == wanted) {
        let image = load_input_image(&dir.join(&row.filename), input_shape)?;
        items.push(Sample::new(&row.filename, image, row.raw_score)?);
    }
    if items.is_empty() {
        return Err(Error::Dataset("no samples".into()));
    }
    Ok(LabeledDataset::new(items))
}

/// Loads an 8-bit image as an `H × W × 3` tensor with values in `[0, 1]`.
pub fn load_image_hwc(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(rgb8_to_hwc(&img))
}

/// Loads an image as network input (`3 × H × W`), resizing when the file's
/// size differs from `input_shape`.
pub fn load_input_image(path: &Path, input_shape: &[usize]) -> Result<Tensor> {
    if input_shape.len() != 3 || input_shape[0] != 3 {
        return Err(Error::Dataset(format!(
            "image inputs need a 3 x H x W network, model expects {input_shape:?}"
        )));
    }
    let mut img = image::open(path)?.to_rgb8();
    let (h, w) = (input_shape[1] as u32, input_shape[2] as u32);
    if img.dimensions() != (w, h) {
        img = image::imageops::resize(&img, w, h, FilterType::Triangle);
    }
    Ok(hwc_to_chw(&rgb8_to_hwc(&img)))
}

pub fn rgb8_to_hwc(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Tensor::from_parts(vec![h as usize, w as usize, 3], data)
}

/// Quantizes an `H × W × 3` tensor in `[0, 1]` to 8-bit RGB.
pub fn hwc_to_rgb8(t: &Tensor) -> RgbImage {
    let (h, w) = (t.shape()[0] as u32, t.shape()[1] as u32);
    let raw = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(w, h, raw).expect("buffer matches dimensions")
}

pub fn hwc_to_chw(t: &Tensor) -> Tensor {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = src[(y * w + x) * c + ch];
            }
        }
    }
    Tensor::from_parts(vec![c, h, w], out)
}

pub fn chw_to_hwc(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * c + ch] = src[(ch * h + y) * w + x];
            }
        }
    }
    Tensor::from_parts(vec![h, w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> LabeledDataset {
        LabeledDataset::new(
            (0..n)
                .map(|i| Sample::new(format!("s{i}"), Tensor::from_vec(vec![i as f64]).unwrap(), 5.0).unwrap())
                .collect(),
        )
    }

    #[test]
    fn rescale_endpoints_and_midpoint() {
        assert_eq!(rescale_score(1.0).unwrap(), 0.0);
        assert_eq!(rescale_score(9.0).unwrap(), 1.0);
        assert_eq!(rescale_score(5.0).unwrap(), 0.5);
        assert_eq!(unscale_score(0.5), 5.0);
        assert!(matches!(rescale_score(0.5), Err(Error::ScoreRange(_))));
        assert!(rescale_score(9.01).is_err());
        assert!(rescale_score(f64::NAN).is_err());
    }

    #[test]
    fn even_split_halves() {
        let (train, test) = split_dataset(&toy(2222), 0).unwrap();
        assert_eq!((train.len(), test.len()), (1111, 1111));
    }

    #[test]
    fn split_is_seeded() {
        let ds = toy(4);
        let names = |d: &LabeledDataset| d.items().iter().map(|s| s.name.clone()).collect::<Vec<_>>();
        let (a, b) = split_dataset(&ds, 42).unwrap();
        let (c, d) = split_dataset(&ds, 42).unwrap();
        assert_eq!((names(&a), names(&b)), (names(&c), names(&d)));
        assert!(split_dataset(&toy(1), 0).is_err());
    }

    #[test]
    fn layout_conversions_invert() {
        let hwc = Tensor::new(vec![2, 3, 3], (0..18).map(f64::from).collect()).unwrap();
        let chw = hwc_to_chw(&hwc);
        assert_eq!(chw.shape(), &[3, 2, 3]);
        assert_eq!(chw.at(&[1, 0, 2]), hwc.at(&[0, 2, 1]));
        assert_eq!(chw_to_hwc(&chw), hwc);
    }

    proptest::proptest! {
        #[test]
        fn split_partitions(n in 2usize..200, seed in 0u64..1000) {
            let (train, test) = split_dataset(&toy(n), seed).unwrap();
            proptest::prop_assert_eq!(train.len(), n.div_ceil(2));
            proptest::prop_assert_eq!(test.len(), n / 2);
            let mut all: Vec<f64> = train.items().iter().chain(test.items()).map(|s| s.image.data()[0]).collect();
            all.sort_by(f64::total_cmp);
            proptest::prop_assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        }
    }
}
