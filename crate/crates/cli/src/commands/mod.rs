pub mod explain;
pub mod make_toy;
pub mod occlude;
pub mod train;
pub mod validate;

use std::path::Path;

use anyhow::{bail, Context, Result};
use relprop::data::{hwc_to_chw, load_image_hwc};
use relprop::model_io::{decode_model, parse_manifest};
use relprop::{Network, Tensor};

use crate::run::Run;

/// Loads a model, recording both of its files as run inputs.
pub fn load_model(run: &mut Run, path: &Path) -> Result<Network> {
    let json = run.read_input(path)?;
    let json = String::from_utf8(json).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let manifest = parse_manifest(&json).with_context(|| format!("loading {}", path.display()))?;
    let blob_path = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let blob = run.read_input(&blob_path)?;
    decode_model(&manifest, &blob).with_context(|| format!("loading {}", path.display()))
}

/// Loads an image as `H × W × 3` and checks it against the model input.
pub fn load_image(run: &mut Run, path: &Path, net: &Network) -> Result<Tensor> {
    run.read_input(path)?;
    let img = load_image_hwc(path).with_context(|| format!("loading {}", path.display()))?;
    let chw = hwc_to_chw(&img);
    if chw.shape() != net.input_shape() {
        bail!(
            "image {} has shape {:?} (C x H x W) but the model expects {:?}",
            path.display(),
            chw.shape(),
            net.input_shape()
        );
    }
    Ok(img)
}

/// `f64` values as text that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
