//! Run manifests: the resolved invocation, input digests, outputs and
//! timestamps, written as JSON alongside every primary output. Re-running
//! with identical manifest inputs reproduces outputs bit-identically in
//! 64-bit mode.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{Cli, CliError};

pub struct ManifestBuilder {
    subcommand: &'static str,
    precision: String,
    threads: usize,
    seed: u64,
    started_unix: u64,
    inputs: Vec<Value>,
    outputs: Vec<PathBuf>,
    config: Option<Value>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl ManifestBuilder {
    pub fn new(subcommand: &'static str, cli: &Cli, seed: u64) -> Self {
        ManifestBuilder {
            subcommand,
            precision: cli.precision.clone(),
            threads: cli.threads,
            seed,
            started_unix: now_unix(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: None,
        }
    }

    /// Records an input file with its SHA-256 digest.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::data("cli", format!("cannot read {}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(json!({
            "path": path.display().to_string(),
            "sha256": hex,
        }));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Attaches the fully resolved configuration.
    pub fn config(&mut self, value: Value) {
        self.config = Some(value);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let doc = json!({
            "subcommand": self.subcommand,
            "version": env!("CARGO_PKG_VERSION"),
            "precision": self.precision,
            "threads": self.threads,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "started_unix": self.started_unix,
            "finished_unix": now_unix(),
        });
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| CliError::data("cli", format!("manifest serialization: {e}")))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Writes next to the primary output, or to
    /// `dnahnet-<subcommand>.manifest.json` in the working directory for
    /// stdout-only runs.
    pub fn write_default(&self, out: &Option<PathBuf>, sub: &str) -> Result<(), CliError> {
        let path = match out {
            Some(o) => crate::manifest_path(o),
            None => PathBuf::from(format!("dnahnet-{sub}.manifest.json")),
        };
        self.write(&path)
    }
}
