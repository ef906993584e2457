//! Content hashes and `<artifact>.provenance.json` sidecars.
//!
//! Sidecars hold no timestamps or absolute paths, so identical inputs give
//! byte-identical sidecars.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const SIDECAR_SUFFIX: &str = ".provenance.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Hash of the canonical JSON form of a configuration value.
pub fn config_sha256<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    Ok(sha256_hex(serde_json::to_string(&value)?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub checkpoint_sha256: Option<String>,
    /// Input file name to content hash.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &str, seed: Option<u64>, config: &T) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_sha256: config_sha256(config)?,
            config: serde_json::to_value(config)?,
            checkpoint_sha256: None,
            inputs: BTreeMap::new(),
        })
    }

    pub fn with_checkpoint(mut self, path: impl AsRef<Path>) -> Result<Self> {
        self.checkpoint_sha256 = Some(file_sha256(path)?);
        Ok(self)
    }

    /// Records an input file under its file name.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, file_sha256(path)?);
        Ok(())
    }

    pub fn sidecar_path(artifact: impl AsRef<Path>) -> PathBuf {
        let mut s = artifact.as_ref().as_os_str().to_owned();
        s.push(SIDECAR_SUFFIX);
        PathBuf::from(s)
    }

    /// Writes the sidecar next to `artifact` and returns its path.
    pub fn write_for(&self, artifact: impl AsRef<Path>) -> Result<PathBuf> {
        let path = Self::sidecar_path(artifact);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
