//! Run manifests: what ran, with which configuration, on which files.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tignn_core::io::{to_json, write_atomic};
use tignn_core::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "manifest/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Artifact {
            path: path.to_path_buf(),
            sha256: hex_sha256(&data),
            bytes: data.len() as u64,
        })
    }
}

pub fn hex_sha256(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    /// Full configuration snapshot; passing this manifest back as `--config`
    /// repeats the run.
    pub config: Value,
    pub seed: u64,
    pub code_version: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix: f64,
    pub wall_time_s: f64,
    /// False when the run was interrupted before finishing.
    pub completed: bool,
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Json {
            context: "snapshotting the configuration".into(),
            source: e,
        })?;
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Ok(ManifestBuilder {
            manifest: RunManifest {
                schema: MANIFEST_SCHEMA.into(),
                command: command.into(),
                config,
                seed,
                code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: started,
                wall_time_s: 0.0,
                completed: true,
            },
            clock: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(Artifact::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.push(Artifact::of(path)?);
        Ok(())
    }

    pub fn interrupted(&mut self) {
        self.manifest.completed = false;
    }

    /// Writes `<dir>/<command>.manifest.json` and returns its path.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.manifest.wall_time_s = self.clock.elapsed().as_secs_f64();
        let path = dir.join(format!("{}.manifest.json", self.manifest.command));
        write_atomic(&path, to_json(&self.manifest, "run manifest")?)?;
        Ok(path)
    }
}
