use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Audit record written next to every command's outputs. The only place
/// wall-clock values appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub dataset: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value, started_unix_ms: u128) -> Self {
        Self {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            dataset: Vec::new(),
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    ///
    /// Fails if any referenced path is missing.
    pub fn write(mut self, dir: &Path) -> CliResult<PathBuf> {
        for p in self
            .dataset
            .iter()
            .chain(&self.checkpoints)
            .chain(&self.outputs)
        {
            if !p.exists() {
                return Err(CliError::Usage(format!(
                    "manifest references missing path {}",
                    p.display()
                )));
            }
        }
        self.finished_unix_ms = now_ms();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self)? + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_checks_paths() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.txt");
        fs::write(&out, "x").unwrap();
        let mut m = RunManifest::new("train", 3, serde_json::json!({"k": 1}), 10);
        m.outputs.push(out);
        let path = m.clone().write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back.outputs, m.outputs);
        assert!(back.finished_unix_ms >= back.started_unix_ms);

        m.outputs.push(dir.path().join("missing"));
        assert!(m.write(dir.path()).is_err());
    }
}
