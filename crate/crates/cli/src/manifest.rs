//! Run manifests: one JSON file next to every output, naming every
//! parameter that influenced the bytes.
//!
//! The manifest is run metadata, not a data artifact - it records wall-clock
//! timing and is the only output excluded from byte-reproducibility
//! comparisons.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix_ms: u128,
    pub wall_clock_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_unix_ms: u128,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    pub fn write(
        self,
        path: &Path,
        parameters: Value,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            tool: "prefiqs",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            parameters,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix_ms: self.started_unix_ms,
            wall_clock_ms: self.started.elapsed().as_millis(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Domain(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

/// Manifest path for a file output: `scores.csv` -> `scores.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}
