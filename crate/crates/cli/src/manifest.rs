use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_at, CliError};

/// Provenance record written next to the primary output of a command.
/// Everything except the two timestamps is a function of the invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(io_at(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_at(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    command: &'static str,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
    started_at: String,
}

impl ManifestBuilder {
    pub fn start(command: &'static str, config: &impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            seed: None,
            started_at: now(),
        })
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Hashes inputs and outputs and writes `<primary>.manifest.json`.
    pub fn finish(self, primary: &Path, outputs: &[&Path]) -> Result<PathBuf, CliError> {
        let digests =
            |paths: &mut dyn Iterator<Item = &Path>| -> Result<BTreeMap<String, String>, CliError> {
                paths
                    .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                    .collect()
            };
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            inputs: digests(&mut self.inputs.iter().map(PathBuf::as_path))?,
            outputs: digests(&mut outputs.iter().copied())?,
            seed: self.seed,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = manifest_path(primary);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").map_err(io_at(&path))?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
