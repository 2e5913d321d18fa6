//! Run manifests: everything needed to re-execute a command and check its
//! reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub invocation: Command,
    pub seed: u64,
    /// Absolute input path to SHA-256 digest.
    pub inputs: BTreeMap<PathBuf, String>,
    /// Report file name to SHA-256 digest.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(e).at(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(e).at(path))
    }
}
