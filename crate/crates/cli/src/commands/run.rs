use kare_core::corpus::QAExample;
use kare_core::pipeline::{PipelineFailure, PipelineTrace};
use kare_core::{Format, Pipelines};
use serde::Serialize;

use super::{
    par_map, resolve_format, resolve_pipeline, write_jsonl, BackendSettings, CorpusSettings,
};
use crate::args::{PipelineArg, RunArgs};
use crate::config::FileConfig;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

#[derive(Debug, Serialize)]
struct RunConfig<'a> {
    backend: &'a BackendSettings,
    corpus: &'a CorpusSettings,
    pipeline: &'static str,
    format: Option<Format>,
    strict_kg: bool,
}

#[derive(Debug, Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    question: &'a str,
    answer: &'a str,
    trace: &'a PipelineTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn cmd_run(args: RunArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let backend = BackendSettings::resolve(&args.backend, cfg)?;
    let corpus = CorpusSettings::resolve(&args.corpus, cfg);
    let pipeline = resolve_pipeline(args.pipeline, cfg)?;
    let format = match pipeline {
        PipelineArg::Ka => Some(resolve_format(args.format, cfg)?),
        PipelineArg::Vanilla => None,
    };
    let config = RunConfig {
        backend: &backend,
        corpus: &corpus,
        pipeline: match pipeline {
            PipelineArg::Ka => "ka",
            PipelineArg::Vanilla => "vanilla",
        },
        format,
        strict_kg: args.strict_kg,
    };
    let mut manifest = ManifestBuilder::start("run", &config)?.input(&corpus.input);
    for p in backend.inputs() {
        manifest = manifest.input(p);
    }

    let examples = corpus.load()?;
    let backends = backend.build()?;
    let prompts = backend.prompt_set()?;
    let pipelines = Pipelines::new(&backends, &prompts);
    let run_one = |ex: &QAExample| match format {
        Some(f) => pipelines.run_ka(&ex.question, &ex.retrieved, f, args.strict_kg),
        None => pipelines.run_vanilla(&ex.question, &ex.retrieved),
    };
    let results: Vec<Result<PipelineTrace, PipelineFailure>> =
        par_map(corpus.workers, &examples, run_one);

    let mut first_error = None;
    let lines: Vec<PredictionLine> = examples
        .iter()
        .zip(&results)
        .map(|(ex, r)| {
            let (trace, error) = match r {
                Ok(t) => (t, None),
                Err(f) => {
                    let msg = format!("{}: {}", f.error.name(), f.error);
                    log::warn!("example {}: {msg}", ex.id);
                    first_error.get_or_insert((f.error.name(), ex.id.clone(), f.error.to_string()));
                    (f.trace.as_ref(), Some(msg))
                }
            };
            PredictionLine {
                id: &ex.id,
                question: &ex.question,
                answer: trace.answer(),
                trace,
                error,
            }
        })
        .collect();
    write_jsonl(&args.out, &lines)?;
    manifest.finish(&args.out, &[&args.out])?;

    let failed = results.iter().filter(|r| r.is_err()).count();
    let t = backends.telemetry();
    eprintln!(
        "{} predictions ({failed} failed), {} requests, {} retries",
        lines.len(),
        t.requests,
        t.retries
    );
    match first_error {
        Some((name, id, message)) => Err(CliError::data(
            name,
            format!("{failed} example(s) failed; first was {id}: {message}"),
        )),
        None => Ok(()),
    }
}
