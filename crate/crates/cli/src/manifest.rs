//! `manifest.json`: written before a command starts, finalized when it ends.
//! A run directory whose manifest is not `complete` is incomplete.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
    pub status: RunStatus,
    /// Output paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

fn now() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

/// A manifest bound to its run directory.
pub struct ManifestHandle {
    path: PathBuf,
    pub manifest: RunManifest,
}

impl ManifestHandle {
    pub fn begin(run_dir: &Path, command: &str, config: Value, seed: Option<u64>) -> CliResult<Self> {
        fs::create_dir_all(run_dir).map_err(|e| CliError::io(run_dir, e))?;
        let handle = ManifestHandle {
            path: run_dir.join(MANIFEST_FILE),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                config,
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started: now(),
                finished: None,
                status: RunStatus::Running,
                artifacts: Vec::new(),
                error: None,
            },
        };
        handle.write()?;
        Ok(handle)
    }

    fn write(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&self.path, text).map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self, outcome: &CliResult<Vec<String>>) -> CliResult<()> {
        self.manifest.finished = Some(now());
        match outcome {
            Ok(artifacts) => {
                self.manifest.status = RunStatus::Complete;
                self.manifest.artifacts = artifacts.clone();
            }
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.to_string());
            }
        }
        self.write()
    }
}
