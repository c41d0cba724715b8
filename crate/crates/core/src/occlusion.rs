//! Occlusion sensitivity: blank out image regions, re-score, and compare the
//! score change with the heatmap relevance inside each region.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{chw_to_hwc, hwc_to_chw};
use crate::error::{Error, Result};
use crate::lrp::{relprop, LrpConfig};
use crate::network::Network;
use crate::render::pool_channels;
use crate::tensor::Tensor;

/// Axis-aligned rectangle or ellipse in pixel coordinates.
///
/// A pixel `(x, y)` belongs to an ellipse when its center `(x + ½, y + ½)`
/// satisfies `((px − cx)/rx)² + ((py − cy)/ry)² ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "coords", rename_all = "kebab-case")]
pub enum Region {
    /// `[x, y, width, height]`
    Rect([usize; 4]),
    /// `[cx, cy, rx, ry]`
    Ellipse([f64; 4]),
}

impl Region {
    pub fn rect(x: usize, y: usize, width: usize, height: usize) -> Self {
        Region::Rect([x, y, width, height])
    }

    fn check(&self, height: usize, width: usize) -> std::result::Result<(), String> {
        match *self {
            Region::Rect([x, y, w, h]) => {
                if w == 0 || h == 0 {
                    return Err("rectangle has zero area".into());
                }
                if x + w > width || y + h > height {
                    return Err(format!(
                        "rectangle [{x}, {y}, {w}, {h}] exceeds image {width}x{height}"
                    ));
                }
            }
            Region::Ellipse([cx, cy, rx, ry]) => {
                if !(rx > 0.0 && ry > 0.0) || ![cx, cy, rx, ry].iter().all(|v| v.is_finite()) {
                    return Err("ellipse needs finite center and positive axes".into());
                }
                if cx - rx < 0.0 || cy - ry < 0.0 || cx + rx > width as f64 || cy + ry > height as f64 {
                    return Err(format!(
                        "ellipse [{cx}, {cy}, {rx}, {ry}] exceeds image {width}x{height}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Region::Rect([rx, ry, w, h]) => x >= rx && x < rx + w && y >= ry && y < ry + h,
            Region::Ellipse([cx, cy, ax, ay]) => {
                let dx = (x as f64 + 0.5 - cx) / ax;
                let dy = (y as f64 + 0.5 - cy) / ay;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fill {
    /// Per-channel mean of the un-occluded image.
    #[default]
    ImageMean,
    /// Constant RGB in 8-bit units.
    Constant([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    #[serde(default)]
    pub name: String,
    pub regions: Vec<Region>,
    #[serde(default)]
    pub fill: Fill,
}

/// JSON entries are either full specs or a single region with an optional fill.
#[derive(Deserialize)]
#[serde(untagged)]
enum SpecEntry {
    Full(OcclusionSpec),
    Single {
        #[serde(default)]
        name: String,
        #[serde(flatten)]
        region: Region,
        #[serde(default)]
        fill: Fill,
    },
}

/// Parses a JSON list of occlusion specs. Unnamed specs are named `spec{i}`.
pub fn parse_specs(json: &str) -> Result<Vec<OcclusionSpec>> {
    let entries: Vec<SpecEntry> = serde_json::from_str(json)?;
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut spec = match e {
                SpecEntry::Full(s) => s,
                SpecEntry::Single { name, region, fill } => OcclusionSpec {
                    name,
                    regions: vec![region],
                    fill,
                },
            };
            if spec.name.is_empty() {
                spec.name = format!("spec{i}");
            }
            spec
        })
        .collect())
}

/// Checks every region of every spec against an image of the given size.
pub fn validate_specs(specs: &[OcclusionSpec], height: usize, width: usize) -> Result<()> {
    for (s, spec) in specs.iter().enumerate() {
        if let Fill::Constant(rgb) = spec.fill {
            if rgb.iter().any(|v| !(0.0..=255.0).contains(v)) {
                return Err(Error::Region {
                    spec: s,
                    region: 0,
                    message: format!("fill {rgb:?} outside 0..=255"),
                });
            }
        }
        for (r, region) in spec.regions.iter().enumerate() {
            region.check(height, width).map_err(|message| Error::Region {
                spec: s,
                region: r,
                message,
            })?;
        }
    }
    Ok(())
}

fn image_dims(img: &Tensor) -> Result<(usize, usize)> {
    match *img.shape() {
        [h, w, 3] => Ok((h, w)),
        _ => Err(Error::Config(format!(
            "occlusion needs an H x W x 3 image, got {:?}",
            img.shape()
        ))),
    }
}

/// Row-major pixel mask covered by the union of `regions`.
pub fn region_mask(regions: &[Region], height: usize, width: usize) -> Vec<bool> {
    (0..height * width)
        .map(|i| regions.iter().any(|r| r.contains(i % width, i / width)))
        .collect()
}

fn channel_means(img: &Tensor) -> [f64; 3] {
    let mut sums = [0.0; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            sums[c] += px[c];
        }
    }
    let n = (img.len() / 3) as f64;
    sums.map(|s| s / n)
}

/// Replaces the pixels inside the spec's regions by its fill. Pixels outside
/// are copied bit for bit.
pub fn apply_occlusion(img: &Tensor, spec: &OcclusionSpec) -> Result<Tensor> {
    let (h, w) = image_dims(img)?;
    validate_specs(std::slice::from_ref(spec), h, w)?;
    let fill = match spec.fill {
        Fill::ImageMean => channel_means(img),
        Fill::Constant(rgb) => rgb.map(|v| v / 255.0),
    };
    let mask = region_mask(&spec.regions, h, w);
    let mut out = img.clone();
    for (px, _) in out.data_mut().chunks_exact_mut(3).zip(&mask).filter(|(_, m)| **m) {
        px.copy_from_slice(&fill);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcclusionRow {
    pub name: String,
    pub occluded_score: f64,
    pub delta: f64,
    /// Share of the baseline heatmap's total positive relevance inside the
    /// occluded pixels.
    pub relevance_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct OcclusionReport {
    pub baseline_score: f64,
    /// Channel-pooled baseline heatmap, `H × W`.
    pub baseline_heatmap: Tensor,
    pub rows: Vec<OcclusionRow>,
    /// Occluded inputs (`H × W × 3`) in spec order.
    pub occluded_images: Vec<Tensor>,
    /// Heatmaps of the occluded inputs (`3 × H × W` relevance) in spec order.
    pub occluded_heatmaps: Vec<Tensor>,
}

impl OcclusionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,name,baseline_score,occluded_score,delta,relevance_fraction\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                csv_field(&r.name),
                self.baseline_score,
                r.occluded_score,
                r.delta,
                r.relevance_fraction
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn score_of(net: &Network, img: &Tensor, cfg: &LrpConfig) -> Result<(f64, Tensor)> {
    let trace = net.forward(&hwc_to_chw(img))?;
    let rel = relprop(net, &trace, cfg)?;
    Ok((rel.score(), rel.heatmap().clone()))
}

fn positive_fraction(pixels: &Tensor, mask: &[bool]) -> f64 {
    let total: f64 = pixels.data().iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let inside: f64 = pixels
        .data()
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(v, _)| v.max(0.0))
        .sum();
    (inside / total).clamp(0.0, 1.0)
}

/// Scores the baseline image and every occluded variant, and relates each
/// score change to the baseline relevance inside the occluded area.
pub fn occlusion_sweep(
    net: &Network,
    img: &Tensor,
    specs: &[OcclusionSpec],
    cfg: &LrpConfig,
) -> Result<OcclusionReport> {
    let (h, w) = image_dims(img)?;
    validate_specs(specs, h, w)?;
    let (baseline_score, heat) = score_of(net, img, cfg)?;
    let baseline_heatmap = pool_channels(&heat)?;
    let mut report = OcclusionReport {
        baseline_score,
        baseline_heatmap,
        rows: Vec::with_capacity(specs.len()),
        occluded_images: Vec::with_capacity(specs.len()),
        occluded_heatmaps: Vec::with_capacity(specs.len()),
    };
    for spec in specs {
        let occluded = apply_occlusion(img, spec)?;
        let (score, heat) = score_of(net, &occluded, cfg)?;
        let mask = region_mask(&spec.regions, h, w);
        report.rows.push(OcclusionRow {
            name: spec.name.clone(),
            occluded_score: score,
            delta: score - baseline_score,
            relevance_fraction: positive_fraction(&report.baseline_heatmap, &mask),
        });
        report.occluded_images.push(occluded);
        report.occluded_heatmaps.push(heat);
    }
    Ok(report)
}

/// The `win_h × win_w` window holding the most positive relevance; ties go
/// to the first position in row-major order.
pub fn top_relevance_window(pixels: &Tensor, win_h: usize, win_w: usize) -> Region {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    assert!(win_h <= h && win_w <= w, "window larger than image");
    let pos: Vec<f64> = pixels.data().iter().map(|v| v.max(0.0)).collect();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for y in 0..=h - win_h {
        for x in 0..=w - win_w {
            let mass: f64 = (y..y + win_h)
                .map(|yy| pos[yy * w + x..yy * w + x + win_w].iter().sum::<f64>())
                .sum();
            if mass > best.0 {
                best = (mass, x, y);
            }
        }
    }
    Region::rect(best.1, best.2, win_w, win_h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementTrial {
    /// |score change| when occluding the top-relevance window.
    pub top_delta: f64,
    /// Mean |score change| over the area-matched random windows.
    pub random_delta: f64,
}

impl AgreementTrial {
    pub fn agrees(&self) -> bool {
        self.top_delta > self.random_delta
    }
}

/// One agreement trial: occlude the quarter-area window (half height, half
/// width) with the most positive relevance and `n_random` uniformly placed
/// windows of the same size, all with image-mean fill.
pub fn agreement_trial(
    net: &Network,
    img: &Tensor,
    cfg: &LrpConfig,
    n_random: usize,
    rng: &mut impl Rng,
) -> Result<AgreementTrial> {
    let (h, w) = image_dims(img)?;
    let (wh, ww) = ((h / 2).max(1), (w / 2).max(1));
    let (base, heat) = score_of(net, img, cfg)?;
    let top = top_relevance_window(&pool_channels(&heat)?, wh, ww);
    let delta = |region: Region| -> Result<f64> {
        let spec = OcclusionSpec {
            name: String::new(),
            regions: vec![region],
            fill: Fill::ImageMean,
        };
        let y = net.predict(&hwc_to_chw(&apply_occlusion(img, &spec)?))?;
        Ok((y.data()[cfg.output_selector] - base).abs())
    };
    let top_delta = delta(top)?;
    let mut random_sum = 0.0;
    for _ in 0..n_random {
        let region = Region::rect(rng.gen_range(0..=w - ww), rng.gen_range(0..=h - wh), ww, wh);
        random_sum += delta(region)?;
    }
    Ok(AgreementTrial {
        top_delta,
        random_delta: random_sum / n_random.max(1) as f64,
    })
}

/// Converts a network input (`3 × H × W`) back to an occludable image.
pub fn input_to_image(x: &Tensor) -> Tensor {
    chw_to_hwc(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::new(vec![h, w, 3], (0..h * w * 3).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap()
    }

    fn spec(regions: Vec<Region>, fill: Fill) -> OcclusionSpec {
        OcclusionSpec { name: "t".into(), regions, fill }
    }

    #[test]
    fn empty_region_list_is_identity() {
        let img = ramp(4, 5);
        assert_eq!(apply_occlusion(&img, &spec(vec![], Fill::ImageMean)).unwrap(), img);
    }

    #[test]
    fn full_rect_constant_fill() {
        let img = ramp(3, 3);
        let out = apply_occlusion(&img, &spec(vec![Region::rect(0, 0, 3, 3)], Fill::Constant([51.0, 51.0, 51.0]))).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn half_rect_mean_fill() {
        let img = ramp(4, 4);
        let means = channel_means(&img);
        let out = apply_occlusion(&img, &spec(vec![Region::rect(0, 0, 2, 4)], Fill::ImageMean)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for (c, &mean) in means.iter().enumerate() {
                    let v = out.at(&[y, x, c]);
                    if x < 2 {
                        assert_eq!(v, mean);
                    } else {
                        assert_eq!(v.to_bits(), img.at(&[y, x, c]).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn ellipse_uses_pixel_centers() {
        let e = Region::Ellipse([2.0, 2.0, 1.0, 1.0]);
        let mask = region_mask(&[e], 4, 4);
        let inside: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
        // Centers (1.5,1.5),(2.5,1.5),(1.5,2.5),(2.5,2.5) are at distance ~0.707.
        assert_eq!(inside, vec![5, 6, 9, 10]);
    }

    #[test]
    fn out_of_bounds_names_region() {
        let specs = vec![
            spec(vec![Region::rect(0, 0, 1, 1)], Fill::ImageMean),
            spec(vec![Region::rect(0, 0, 1, 1), Region::rect(3, 0, 2, 1)], Fill::ImageMean),
        ];
        let err = validate_specs(&specs, 4, 4).unwrap_err();
        assert!(matches!(err, Error::Region { spec: 1, region: 1, .. }), "{err}");
        let bad_fill = spec(vec![], Fill::Constant([300.0, 0.0, 0.0]));
        assert!(validate_specs(&[bad_fill], 4, 4).is_err());
        assert!(validate_specs(&[spec(vec![Region::Ellipse([1.0, 1.0, 2.0, 1.0])], Fill::ImageMean)], 4, 4).is_err());
    }

    #[test]
    fn parses_both_entry_forms() {
        let json = r#"[
            {"name": "original", "regions": []},
            {"name": "mouth", "shape": "rect", "coords": [1, 2, 3, 1], "fill": {"constant": [200, 150, 120]}},
            {"regions": [{"shape": "ellipse", "coords": [2.0, 2.0, 1.0, 0.5]}], "fill": "image-mean"}
        ]"#;
        let specs = parse_specs(json).unwrap();
        assert_eq!(specs.len(), 3);
        assert!(specs[0].regions.is_empty());
        assert_eq!(specs[1].regions, vec![Region::rect(1, 2, 3, 1)]);
        assert_eq!(specs[1].fill, Fill::Constant([200.0, 150.0, 120.0]));
        assert_eq!(specs[2].name, "spec2");
        assert!(parse_specs("[]").unwrap().is_empty());
    }

    #[test]
    fn top_window_finds_mass() {
        let mut v = vec![0.0; 16];
        v[3 * 4 + 3] = 5.0;
        v[0] = -9.0;
        let region = top_relevance_window(&Tensor::new(vec![4, 4], v).unwrap(), 2, 2);
        assert_eq!(region, Region::rect(2, 2, 2, 2));
    }

    #[test]
    fn fraction_counts_positive_mass_only() {
        let pixels = Tensor::new(vec![1, 4], vec![1.0, 3.0, -2.0, 0.0]).unwrap();
        assert_eq!(positive_fraction(&pixels, &[true, false, true, true]), 0.25);
        assert_eq!(positive_fraction(&Tensor::zeros(vec![1, 2]).unwrap(), &[true, true]), 0.0);
    }
}
