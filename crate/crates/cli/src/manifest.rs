//! Run manifests: the configuration, input digests and seed needed to
//! reproduce a run's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use afcfit::Error;
use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_id: Option<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        Ok(Self {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            seed,
            fit_id: None,
            outputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(
            role.to_owned(),
            InputDigest {
                path: path.display().to_string(),
                sha256: file_digest(path)?,
            },
        );
        Ok(())
    }

    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone()).context("manifest config has an unexpected shape")
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Short identifier derived from a run's configuration and input digests.
pub fn fit_id(config: &impl Serialize, digests: &[&str]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    for d in digests {
        h.update(d.as_bytes());
    }
    Ok(hex::encode(h.finalize())[..16].to_owned())
}

pub fn write_json(dir: &Path, name: &str, value: &impl Serialize, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    outputs.push(name.to_owned());
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes the manifest last, after all listed outputs exist.
pub fn finish(dir: &Path, mut manifest: Manifest, outputs: Vec<String>) -> Result<()> {
    manifest.outputs = outputs;
    let mut ignored = Vec::new();
    write_json(dir, MANIFEST_FILE, &manifest, &mut ignored)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}
