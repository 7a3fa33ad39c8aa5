//! Run manifests written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical (sorted-key, compact) JSON of `config`.
    pub config_hash: String,
    pub config: Value,
    pub dataset_id: String,
    pub seeds: Vec<u64>,
    pub versions: Versions,
    pub started_at: String,
    pub finished_at: String,
    pub status: String,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub rbmgradlab: &'static str,
    pub dataset_format: &'static str,
    pub checkpoint_format: &'static str,
}

impl Versions {
    fn current() -> Self {
        Versions {
            rbmgradlab: env!("CARGO_PKG_VERSION"),
            dataset_format: "RBMDS1",
            checkpoint_format: "RBMCKPT1",
        }
    }
}

/// Collects outputs while a command runs and writes the manifest at the end.
pub struct ManifestBuilder {
    command: &'static str,
    config: Value,
    dataset_id: String,
    seeds: Vec<u64>,
    started: DateTime<Utc>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(
        command: &'static str,
        config: &impl Serialize,
        dataset_id: &str,
    ) -> Result<Self, CliError> {
        let config = serde_json::to_value(config)
            .map_err(|e| CliError::Usage(format!("cannot encode configuration: {e}")))?;
        Ok(ManifestBuilder {
            command,
            config,
            dataset_id: dataset_id.to_string(),
            seeds: Vec::new(),
            started: Utc::now(),
            outputs: Vec::new(),
        })
    }

    pub fn seeds(&mut self, seeds: impl IntoIterator<Item = u64>) {
        self.seeds.extend(seeds);
        self.seeds.sort_unstable();
        self.seeds.dedup();
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    /// Writes the manifest to `path`; the manifest lists itself as an output.
    pub fn finish(mut self, path: &Path, status: &str) -> Result<RunManifest, CliError> {
        self.outputs.push(path.to_path_buf());
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: config_hash(&self.config),
            config: self.config,
            dataset_id: self.dataset_id,
            seeds: self.seeds,
            versions: Versions::current(),
            started_at: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            status: status.to_string(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        Ok(manifest)
    }
}

/// `serde_json::Value` keeps object keys in a `BTreeMap`, so compact
/// serialization is already canonical.
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON values serialize");
    hex(&Sha256::digest(canonical.as_bytes()))
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
