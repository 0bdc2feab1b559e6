//! Manifests written next to every output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL: &str = "topiclabel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `config` (keys sorted).
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(command: &str, config: impl Serialize, seeds: Vec<u64>) -> Result<Self, CliError> {
        let config = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
        let encoded = serde_json::to_vec(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: sha256_hex(&encoded),
            config,
            seeds,
            artifacts: Vec::new(),
        })
    }

    /// Records `dir/name`, which must already be written.
    pub fn add(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: file_sha256(&dir.join(name))?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}
