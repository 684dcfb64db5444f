pub mod datagen;
pub mod debug;
pub mod eval;
pub mod gradcheck;
pub mod run;
pub mod train;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kare_core::backend::{OpenAiBackend, OpenAiConfig, RoleSettings, ScriptedBackend};
use kare_core::corpus::{load_corpus, QAExample};
use kare_core::{Backends, ChatBackend, Format, PromptSet};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::{BackendArgs, CorpusArgs, FormatArg, PipelineArg};
use crate::config::{parse_choice, FileConfig};
use crate::error::{io_at, CliError};

pub const DEFAULT_NUM_DOCS: usize = 5;

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Graph => Format::Graph,
            FormatArg::Keypoints => Format::Keypoints,
            FormatArg::Summary => Format::Summary,
        }
    }
}

/// Backend settings after applying config-file fallbacks.
#[derive(Debug, Clone, Serialize)]
pub struct BackendSettings {
    pub scripted: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: String,
    pub expert_base_url: Option<String>,
    pub expert_model: String,
    pub max_inflight: usize,
    pub request_cap: Option<u64>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub prompts: Option<PathBuf>,
}

impl BackendSettings {
    pub fn resolve(a: &BackendArgs, cfg: &FileConfig) -> Result<Self, CliError> {
        let c = &cfg.backend;
        let scripted = a.scripted.clone().or_else(|| c.scripted.clone());
        let base_url = a.base_url.clone().or_else(|| c.base_url.clone());
        let model = a.model.clone().or_else(|| c.model.clone());
        let model = match (&scripted, model) {
            (_, Some(m)) => m,
            (Some(_), None) => RoleSettings::default().model,
            (None, None) if base_url.is_some() => {
                return Err(CliError::usage("--model is required with --base-url"))
            }
            (None, None) => {
                return Err(CliError::usage(
                    "one of --base-url or --scripted is required",
                ))
            }
        };
        let defaults = RoleSettings::default();
        let settings = Self {
            expert_base_url: a
                .expert_base_url
                .clone()
                .or_else(|| c.expert_base_url.clone())
                .or_else(|| base_url.clone()),
            expert_model: a
                .expert_model
                .clone()
                .or_else(|| c.expert_model.clone())
                .unwrap_or_else(|| model.clone()),
            scripted,
            base_url,
            model,
            max_inflight: a
                .max_inflight
                .or(c.max_inflight)
                .unwrap_or(kare_core::backend::DEFAULT_MAX_INFLIGHT),
            request_cap: a.request_cap.or(c.request_cap),
            temperature: a
                .temperature
                .or(c.temperature)
                .unwrap_or(defaults.temperature),
            max_tokens: a.max_tokens.or(c.max_tokens).unwrap_or(defaults.max_tokens),
            max_attempts: a.max_attempts.or(c.max_attempts).unwrap_or(3),
            prompts: a.prompts.clone().or_else(|| c.prompts.clone()),
        };
        if !(settings.temperature >= 0.0 && settings.temperature.is_finite()) {
            return Err(CliError::usage(
                "--temperature must be a non-negative number",
            ));
        }
        if settings.max_tokens == 0 || settings.max_attempts == 0 {
            return Err(CliError::usage(
                "--max-tokens and --max-attempts must be at least 1",
            ));
        }
        Ok(settings)
    }

    fn http(&self, url: &str) -> Arc<dyn ChatBackend> {
        let mut cfg = OpenAiConfig::new(url);
        cfg.retry.max_attempts = self.max_attempts;
        Arc::new(OpenAiBackend::new(cfg))
    }

    pub fn build(&self) -> Result<Backends, CliError> {
        let (generator, expert): (Arc<dyn ChatBackend>, Arc<dyn ChatBackend>) = match &self.scripted
        {
            Some(path) => {
                let b: Arc<dyn ChatBackend> =
                    Arc::new(ScriptedBackend::load(path).map_err(|e| {
                        CliError::data("MalformedScript", format!("{}: {e}", path.display()))
                    })?);
                (b.clone(), b)
            }
            None => {
                let url = self.base_url.as_deref().expect("resolve checks base_url");
                let expert_url = self.expert_base_url.as_deref().unwrap_or(url);
                (self.http(url), self.http(expert_url))
            }
        };
        let role = |model: &str| RoleSettings {
            model: model.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        Ok(Backends::new(
            generator,
            role(&self.model),
            expert,
            role(&self.expert_model),
        )
        .with_max_inflight(self.max_inflight)
        .with_request_cap(self.request_cap))
    }

    pub fn prompt_set(&self) -> Result<PromptSet, CliError> {
        Ok(match &self.prompts {
            Some(dir) => PromptSet::load_dir(dir)?,
            None => PromptSet::default(),
        })
    }

    pub fn inputs(&self) -> Vec<&Path> {
        self.scripted.iter().map(PathBuf::as_path).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusSettings {
    pub input: PathBuf,
    pub num_docs: usize,
    pub strict: bool,
    pub workers: usize,
}

impl CorpusSettings {
    pub fn resolve(a: &CorpusArgs, cfg: &FileConfig) -> Self {
        Self {
            input: a.input.clone(),
            num_docs: a
                .num_docs
                .or(cfg.pipeline.num_docs)
                .unwrap_or(DEFAULT_NUM_DOCS),
            strict: a.strict,
            workers: a
                .workers
                .or(cfg.pipeline.workers)
                .unwrap_or(kare_core::datagen::DEFAULT_WORKERS)
                .max(1),
        }
    }

    /// Loads the corpus and keeps the first `num_docs` documents per
    /// question.
    pub fn load(&self) -> Result<Vec<QAExample>, CliError> {
        let loaded = load_corpus(&self.input, self.strict)?;
        for w in loaded.warnings.iter().chain(&loaded.errors) {
            log::warn!("{w}");
        }
        Ok(loaded
            .examples
            .into_iter()
            .map(|mut ex| {
                ex.retrieved.truncate(self.num_docs);
                ex
            })
            .collect())
    }
}

pub fn resolve_pipeline(
    flag: Option<PipelineArg>,
    cfg: &FileConfig,
) -> Result<PipelineArg, CliError> {
    Ok(flag
        .or(parse_choice("pipeline", cfg.pipeline.pipeline.as_deref())?)
        .unwrap_or(PipelineArg::Ka))
}

pub fn resolve_format(flag: Option<FormatArg>, cfg: &FileConfig) -> Result<Format, CliError> {
    Ok(flag
        .or(parse_choice("format", cfg.pipeline.format.as_deref())?)
        .unwrap_or(FormatArg::Graph)
        .into())
}

/// Reads a JSONL file; blank lines are skipped and a bad line is a
/// `MalformedLine` error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = std::fs::File::open(path).map_err(io_at(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            CliError::data(
                "MalformedLine",
                format!("{} line {}: {e}", path.display(), idx + 1),
            )
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), CliError> {
    let f = std::fs::File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(io_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

/// Maps `f` over `items` on a pool of `workers` threads, keeping input
/// order.
pub fn par_map<T: Sync, R: Send>(
    workers: usize,
    items: &[T],
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
