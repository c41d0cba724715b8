//! Staged outputs and the per-run manifest.
//!
//! Commands collect every artifact in memory; nothing touches the output
//! directory until the whole computation has succeeded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
}

pub struct Run {
    command: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, Vec<u8>>,
}

impl Run {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.record_input(path.display().to_string(), &bytes);
        Ok(bytes)
    }

    pub fn record_input(&mut self, key: String, bytes: &[u8]) {
        self.inputs.insert(key, sha256_hex(bytes));
    }

    pub fn stage(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.outputs.insert(name.into(), bytes);
    }

    /// Writes every staged file (temp file + rename), then the manifest.
    pub fn commit(self, dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs.keys().cloned().collect(),
        };
        let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
        manifest_json.push('\n');
        for (name, bytes) in &self.outputs {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            relprop::model_io::write_atomic(&path, bytes)?;
        }
        let path = dir.join(MANIFEST_NAME);
        relprop::model_io::write_atomic(&path, manifest_json.as_bytes())?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
