use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    Ok(sha256_hex(&bytes))
}

/// Reproducibility record written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub configs: serde_json::Value,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub output: String,
    pub output_hash: String,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64, configs: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            seed,
            configs,
            inputs: BTreeMap::new(),
            output: String::new(),
            output_hash: String::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let h = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn set_output(&mut self, path: impl AsRef<Path>, bytes: &[u8]) {
        self.output = path.as_ref().display().to_string();
        self.output_hash = sha256_hex(bytes);
    }

    /// Sibling path `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> std::path::PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        s.into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::write_atomic(path, text.as_bytes()).map_err(|e| e.at(path))
    }
}
