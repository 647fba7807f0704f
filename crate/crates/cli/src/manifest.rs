//! `run_manifest.json`: what produced an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand, e.g. `"train"` or `"dataset build"`.
    pub command: String,
    pub argv: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Collects the manifest while a command runs; written once at the end.
#[derive(Debug)]
pub struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
}

impl ManifestWriter {
    /// Refuses directories that already hold a manifest, so one never gets
    /// replaced by a different run.
    pub fn begin(path: PathBuf, command: &str, argv: &[String]) -> CliResult<Self> {
        if path.exists() {
            return Err(CliError::Config(format!("{} already exists; use a fresh output location", path.display())));
        }
        Ok(ManifestWriter {
            path,
            manifest: RunManifest {
                command: command.to_string(),
                argv: argv.to_vec(),
                config: BTreeMap::new(),
                seed: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: now(),
                finished_unix: 0,
            },
        })
    }

    pub fn in_dir(dir: &Path, command: &str, argv: &[String]) -> CliResult<Self> {
        Self::begin(dir.join(MANIFEST_FILE), command, argv)
    }

    pub fn config(&mut self, config: BTreeMap<String, String>) -> &mut Self {
        self.manifest.config = config;
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.manifest.finished_unix = now();
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        }
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&self.path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", self.path.display())))?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
