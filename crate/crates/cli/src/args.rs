use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kare", version, about = "Knowledge-aware RAG toolkit")]
pub struct Cli {
    /// TOML config file. Flags and environment variables take precedence.
    #[arg(long, global = true, env = "KARE_CONFIG")]
    pub config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a RAG pipeline over a corpus and write predictions.
    Run(RunArgs),
    /// Build contrastive training pairs.
    Datagen(DatagenArgs),
    /// Train the toy n-gram model with the dense DPO loss.
    TrainToy(TrainArgs),
    /// Check the analytic loss gradient against central differences.
    Gradcheck(GradcheckArgs),
    /// Score predictions with exact match and token F1.
    Eval(EvalArgs),
    /// Parse a knowledge file and print its canonical form.
    ParseKg(ParseKgArgs),
    /// Show the token alignment and weight masks of one pair.
    DiffPair(DiffPairArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Base URL of the OpenAI-compatible generator endpoint.
    #[arg(long, env = "KARE_BASE_URL")]
    pub base_url: Option<String>,
    /// Generator model id.
    #[arg(long, env = "KARE_MODEL")]
    pub model: Option<String>,
    /// Base URL of the expert endpoint (defaults to --base-url).
    #[arg(long, env = "KARE_EXPERT_BASE_URL")]
    pub expert_base_url: Option<String>,
    /// Expert model id (defaults to --model).
    #[arg(long, env = "KARE_EXPERT_MODEL")]
    pub expert_model: Option<String>,
    /// Maximum concurrent backend requests.
    #[arg(long, env = "KARE_MAX_INFLIGHT")]
    pub max_inflight: Option<usize>,
    /// Sampling temperature for both roles.
    #[arg(long, env = "KARE_TEMPERATURE")]
    pub temperature: Option<f64>,
    /// Completion token limit for both roles.
    #[arg(long, env = "KARE_MAX_TOKENS")]
    pub max_tokens: Option<u32>,
    /// Attempts per request, counting retries after 429 and 5xx replies.
    #[arg(long, env = "KARE_MAX_ATTEMPTS")]
    pub max_attempts: Option<u32>,
    /// Fail requests beyond this many per run.
    #[arg(long, env = "KARE_REQUEST_CAP")]
    pub request_cap: Option<u64>,
    /// Serve every request from a scripted rule file instead of HTTP.
    #[arg(long, env = "KARE_SCRIPTED")]
    pub scripted: Option<PathBuf>,
    /// Directory of prompt TOML files overriding the built-in prompts.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Vanilla,
    Ka,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Graph,
    Keypoints,
    Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportArg {
    Native,
    Pcr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightSideArg {
    Both,
    Chosen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SftOnArg {
    Chosen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenizerArg {
    Whitespace,
    Byte,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Documents per question passed to the prompts.
    #[arg(long)]
    pub num_docs: Option<usize>,
    /// Abort on the first malformed corpus line.
    #[arg(long)]
    pub strict: bool,
    /// Number of worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Predictions JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Single-call baseline or the three-stage knowledge-aware pipeline.
    #[arg(long, value_enum)]
    pub pipeline: Option<PipelineArg>,
    /// Knowledge representation produced by the first stage.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Fail an example when the knowledge output lacks a required section.
    #[arg(long)]
    pub strict_kg: bool,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Pairs JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-example records and counters as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `ka` refines knowledge; `vanilla` pairs gold and model answers.
    #[arg(long, value_enum)]
    pub pipeline: Option<PipelineArg>,
    /// Knowledge representation that pairs are built from.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Revision attempts per example.
    #[arg(long)]
    pub max_iter: Option<u32>,
    /// Full pair records, or prompt/chosen/rejected lines.
    #[arg(long, value_enum)]
    pub export: Option<ExportArg>,
    /// Treat knowledge output without its required sections as malformed.
    #[arg(long)]
    pub strict_kg: bool,
    /// Re-run reasoning on every accepted pair's chosen side and fail if
    /// any no longer yields a gold answer.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    /// Inverse temperature of the implicit reward.
    #[arg(long, env = "KARE_BETA")]
    pub beta: Option<f64>,
    /// Weight of changed tokens.
    #[arg(long, env = "KARE_GAMMA")]
    pub gamma: Option<f64>,
    /// SFT regularizer weight.
    #[arg(long, env = "KARE_ALPHA")]
    pub alpha: Option<f64>,
    /// Average the SFT term over chosen tokens instead of summing.
    #[arg(long)]
    pub sft_normalize: bool,
    /// Apply gamma to both sequences or to the chosen one only.
    #[arg(long, value_enum)]
    pub weight_side: Option<WeightSideArg>,
    /// Sequence the SFT term is computed on.
    #[arg(long, value_enum, default_value = "chosen")]
    pub sft_on: SftOnArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    /// Train on a pairs file instead of the synthetic fixture.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// n-gram order of the model built for --pairs.
    #[arg(long)]
    pub order: Option<usize>,
    /// Gradient steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for the reference model and synthetic pairs.
    #[arg(long, env = "KARE_SEED")]
    pub seed: Option<u64>,
    /// Metrics CSV.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Write the trained logit table as JSON.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, env = "KARE_SEED")]
    pub seed: Option<u64>,
    /// Coordinates to check across the grid.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Maximum relative error.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Finite-difference step.
    #[arg(long)]
    pub h: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSONL. Repeat to average several runs.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Gold JSONL with `id` and `golden_answers`.
    #[arg(long)]
    pub gold: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParseKgArgs {
    pub path: PathBuf,
    #[arg(long, value_enum, default_value = "graph")]
    pub format: FormatArg,
    /// Print the parsed value as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DiffPairArgs {
    /// Pairs JSONL in the native layout.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub pair_id: String,
    /// Weight shown for changed tokens.
    #[arg(long, env = "KARE_GAMMA")]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "whitespace")]
    pub tokenizer: TokenizerArg,
}
