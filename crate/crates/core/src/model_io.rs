//! Model files: a JSON manifest plus a sidecar blob of little-endian `f32`.
//!
//! The blob holds, for each parameterized layer in order, its weights then
//! its biases, row-major. Values are widened to `f64` on load, so a
//! save/load roundtrip is exact for any network whose parameters are
//! representable in `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{Conv2d, Dense, Layer, MaxPool2d};
use crate::network::Network;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub input_shape: Vec<usize>,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    /// Declared blob size in bytes.
    pub blob_bytes: usize,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerEntry {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        window: [usize; 2],
        stride: usize,
    },
    Relu,
    Flatten,
}

impl LayerEntry {
    fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerEntry::Dense { inputs, outputs } => Some((vec![outputs, inputs], outputs)),
            LayerEntry::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel[0], kernel[1]], out_channels)),
            _ => None,
        }
    }

    fn param_count(&self) -> Option<usize> {
        self.param_shapes()
            .map(|(w, b)| w.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).and_then(|n| n.checked_add(b)))
            .unwrap_or(Some(0))
    }
}

fn entry_for(layer: &Layer) -> LayerEntry {
    match layer {
        Layer::Dense(d) => LayerEntry::Dense {
            inputs: d.inputs(),
            outputs: d.outputs(),
        },
        Layer::Conv2d(c) => {
            let (kh, kw) = c.kernel_size();
            LayerEntry::Conv2d {
                in_channels: c.in_channels(),
                out_channels: c.out_channels(),
                kernel: [kh, kw],
                stride: c.stride,
                padding: c.padding,
            }
        }
        Layer::MaxPool2d(p) => LayerEntry::MaxPool2d {
            window: [p.window.0, p.window.1],
            stride: p.stride,
        },
        Layer::Relu => LayerEntry::Relu,
        Layer::Flatten => LayerEntry::Flatten,
    }
}

/// Serializes `net` into manifest JSON and blob bytes. `blob_name` is
/// recorded in the manifest.
pub fn encode_model(net: &Network, blob_name: &str) -> Result<(String, Vec<u8>)> {
    let mut blob = Vec::with_capacity(net.param_count() * 4);
    for layer in net.layers() {
        for v in layer.params() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        input_shape: net.input_shape().to_vec(),
        blob: blob_name.to_string(),
        blob_bytes: blob.len(),
        layers: net.layers().iter().map(entry_for).collect(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    Ok((json, blob))
}

pub fn parse_manifest(json: &str) -> Result<Manifest> {
    let manifest: Manifest =
        serde_json::from_str(json).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Rebuilds a network from a parsed manifest and its blob bytes.
pub fn decode_model(manifest: &Manifest, blob: &[u8]) -> Result<Network> {
    if blob.len() != manifest.blob_bytes {
        return Err(Error::BlobLength {
            expected: manifest.blob_bytes,
            actual: blob.len(),
        });
    }
    if !blob.len().is_multiple_of(4) {
        return Err(Error::Manifest(format!(
            "blob size {} is not a multiple of 4",
            blob.len()
        )));
    }
    let needed = manifest
        .layers
        .iter()
        .try_fold(0usize, |acc, e| e.param_count().and_then(|n| acc.checked_add(n)))
        .ok_or_else(|| Error::Manifest("parameter count overflows".into()))?;
    let carried = blob.len() / 4;
    if needed != carried {
        return Err(Error::BlobShape { needed, carried });
    }

    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (index, entry) in manifest.layers.iter().enumerate() {
        let at = |e: Error| match e {
            Error::Layer { message, .. } => Error::Layer { layer: index, message },
            other => Error::Layer {
                layer: index,
                message: other.to_string(),
            },
        };
        let layer = match *entry {
            LayerEntry::Dense { .. } | LayerEntry::Conv2d { .. } => {
                let (wshape, nbias) = entry.param_shapes().unwrap();
                let wlen = wshape.iter().product();
                let weight = Tensor::new(wshape, take(wlen)).map_err(at)?;
                let bias = take(nbias);
                match *entry {
                    LayerEntry::Dense { .. } => Layer::Dense(Dense::new(weight, bias).map_err(at)?),
                    LayerEntry::Conv2d { stride, padding, .. } => {
                        Layer::Conv2d(Conv2d::new(weight, bias, stride, padding).map_err(at)?)
                    }
                    _ => unreachable!(),
                }
            }
            LayerEntry::MaxPool2d { window, stride } => {
                Layer::MaxPool2d(MaxPool2d::new((window[0], window[1]), stride).map_err(at)?)
            }
            LayerEntry::Relu => Layer::Relu,
            LayerEntry::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    Network::new(manifest.input_shape.clone(), layers)
}

/// Blob path that accompanies a manifest path (`model.json` → `model.bin`).
pub fn blob_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `net` as `path` (manifest) plus its sidecar blob. Both files are
/// written to temporaries and renamed into place only once complete.
pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    let blob_path = blob_path_for(path);
    let blob_name = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Manifest(format!("unusable model path {}", path.display())))?
        .to_string();
    let (json, blob) = encode_model(net, &blob_name)?;
    write_atomic(&blob_path, &blob)?;
    write_atomic(path, json.as_bytes())
}

pub fn load_model(path: &Path) -> Result<Network> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = parse_manifest(&json)?;
    let blob_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    decode_model(&manifest, &blob)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
