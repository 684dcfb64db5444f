//! Optional TOML config. Every field is optional; a value here is used only
//! when neither the flag nor its environment variable is set.
//!
//! ```toml
//! [backend]
//! base_url = "http://localhost:8000/v1"
//! model = "llama-3-8b"
//!
//! [ddpo]
//! gamma = 1.1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    pub datagen: DatagenFileConfig,
    pub ddpo: DdpoFileConfig,
    pub train: TrainFileConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub expert_base_url: Option<String>,
    pub expert_model: Option<String>,
    pub max_inflight: Option<usize>,
    pub request_cap: Option<u64>,
    pub scripted: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: Option<String>,
    pub format: Option<String>,
    pub num_docs: Option<usize>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenFileConfig {
    pub max_iter: Option<u32>,
    pub export: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpoFileConfig {
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub sft_normalize: Option<bool>,
    pub weight_side: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub order: Option<usize>,
    pub trials: Option<usize>,
    pub tol: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// Parses an enum-valued config entry with the same names the flag accepts.
pub fn parse_choice<T: clap::ValueEnum>(
    key: &str,
    value: Option<&str>,
) -> Result<Option<T>, CliError> {
    value
        .map(|v| {
            T::from_str(v, true)
                .map_err(|_| CliError::usage(format!("config: invalid {key} `{v}`")))
        })
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::FormatArg;

    #[test]
    fn sections_parse() {
        let c: FileConfig = toml::from_str(
            "[backend]\nmodel = \"m\"\n[ddpo]\ngamma = 2.0\n[pipeline]\nformat = \"keypoints\"\n",
        )
        .unwrap();
        assert_eq!(c.backend.model.as_deref(), Some("m"));
        assert_eq!(c.ddpo.gamma, Some(2.0));
        let f: Option<FormatArg> = parse_choice("format", c.pipeline.format.as_deref()).unwrap();
        assert_eq!(f, Some(FormatArg::Keypoints));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[ddpo]\ngama = 2.0\n").is_err());
        assert!(parse_choice::<FormatArg>("format", Some("tree")).is_err());
    }
}
