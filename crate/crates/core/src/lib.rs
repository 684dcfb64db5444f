//! Knowledge-aware retrieval-augmented generation with contrastive
//! refinement data and a dense, token-weighted DPO objective.
//!
//! Modules:
//! - [`knowledge`]: graph / keypoint / summary text formats.
//! - [`backend`]: chat-completion backends (HTTP and scripted).
//! - [`pipeline`]: vanilla and knowledge-aware RAG pipelines.
//! - [`datagen`]: contrastive pair construction.
//! - [`diff`]: tokenization, LCS alignment and token weights.
//! - [`ddpo`]: loss math, a toy language model and its training loop.
//! - [`eval`]: exact match and token F1.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod corpus;
pub mod datagen;
pub mod ddpo;
pub mod diff;
pub mod eval;
pub mod knowledge;
pub mod pipeline;
pub mod prompts;

pub use backend::{BackendError, BackendRole, Backends, ChatBackend, RoleSettings, Stage};
pub use corpus::{QAExample, RetrievedDoc};
pub use datagen::{ContrastiveSample, DatagenConfig, DatagenReport, ExportStyle, PairFormat};
pub use ddpo::{DdpoConfig, DdpoError};
pub use diff::{align, TokenSeq, Tokenizer, WeightMask};
pub use eval::{EvalResult, GoldRecord, PredictionRecord};
pub use knowledge::{Format, FormatError, KnowledgeGraph, KnowledgeRepr};
pub use pipeline::{PipelineTrace, Pipelines};
pub use prompts::PromptSet;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Diff(#[from] diff::DiffError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Ddpo(#[from] DdpoError),
    #[error(transparent)]
    Construction(#[from] datagen::ConstructionError),
    #[error("{message}")]
    Data { name: &'static str, message: String },
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier for the error kind, printed by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Format(e) => e.name(),
            Error::Diff(e) => e.name(),
            Error::Backend(e) => e.name(),
            Error::Pipeline(e) => e.name(),
            Error::Prompt(e) => e.name(),
            Error::Corpus(e) => e.name(),
            Error::Eval(e) => e.name(),
            Error::Ddpo(e) => e.name(),
            Error::Construction(e) => e.name(),
            Error::Data { name, .. } => name,
            Error::Json(_) => "MalformedJson",
            Error::Io(_) => "Io",
        }
    }
}
