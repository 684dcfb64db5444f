use std::io::{BufWriter, Write};

use kare_core::datagen::{
    write_pairs, Constructor, DatagenConfig, DatagenPipeline, DatagenReport, ExampleRecord,
    ExportStyle, DEFAULT_MAX_ITER,
};
use kare_core::Pipelines;
use serde::Serialize;

use super::{resolve_format, resolve_pipeline, BackendSettings, CorpusSettings};
use crate::args::{DatagenArgs, ExportArg, PipelineArg};
use crate::config::{parse_choice, FileConfig};
use crate::error::{io_at, CliError};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Serialize)]
struct Config<'a> {
    backend: &'a BackendSettings,
    corpus: &'a CorpusSettings,
    datagen: &'a DatagenConfig,
    export: ExportStyle,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    report: &'a DatagenReport,
    records: &'a [ExampleRecord],
}

pub fn cmd_datagen(args: DatagenArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let backend = BackendSettings::resolve(&args.backend, cfg)?;
    let corpus = CorpusSettings::resolve(&args.corpus, cfg);
    let datagen = DatagenConfig {
        pipeline: match resolve_pipeline(args.pipeline, cfg)? {
            PipelineArg::Ka => DatagenPipeline::Ka,
            PipelineArg::Vanilla => DatagenPipeline::Vanilla,
        },
        format: resolve_format(args.format, cfg)?,
        max_iter: args
            .max_iter
            .or(cfg.datagen.max_iter)
            .unwrap_or(DEFAULT_MAX_ITER),
        workers: corpus.workers,
        strict_kg: args.strict_kg,
    };
    if datagen.max_iter == 0 {
        return Err(CliError::usage("--max-iter must be at least 1"));
    }
    let export = match args
        .export
        .or(parse_choice("export", cfg.datagen.export.as_deref())?)
        .unwrap_or(ExportArg::Native)
    {
        ExportArg::Native => ExportStyle::Native,
        ExportArg::Pcr => ExportStyle::Pcr,
    };
    let mut manifest = ManifestBuilder::start(
        "datagen",
        &Config {
            backend: &backend,
            corpus: &corpus,
            datagen: &datagen,
            export,
        },
    )?
    .input(&corpus.input);
    for p in backend.inputs() {
        manifest = manifest.input(p);
    }

    let examples = corpus.load()?;
    let backends = backend.build()?;
    let prompts = backend.prompt_set()?;
    let constructor = Constructor::new(Pipelines::new(&backends, &prompts), datagen);
    let run = constructor.run_datagen(&examples);

    let out = &args.out;
    let mut w = BufWriter::new(std::fs::File::create(out).map_err(io_at(out))?);
    write_pairs(&mut w, run.samples(), export, &prompts)?;
    w.flush().map_err(io_at(out))?;

    let mut outputs = vec![out.as_path()];
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&Report {
            report: &run.report,
            records: &run.records,
        })?;
        std::fs::write(path, text + "\n").map_err(io_at(path))?;
        outputs.push(path);
    }
    manifest.finish(out, &outputs)?;

    println!("{}", serde_json::to_string(&run.report)?);
    let t = backends.telemetry();
    eprintln!(
        "{} pairs from {} examples, {} requests, {} retries",
        run.report.accepted,
        run.report.total(),
        t.requests,
        t.retries
    );
    if args.verify {
        let mut failed = Vec::new();
        for s in run.samples() {
            if !constructor.verify_pair(s).map_err(kare_core::Error::from)? {
                failed.push(s.id.as_str());
            }
        }
        eprintln!(
            "verified {}/{} pairs",
            run.report.accepted - failed.len(),
            run.report.accepted
        );
        if !failed.is_empty() {
            return Err(CliError::data(
                "VerificationFailed",
                format!("pairs no longer reach a gold answer: {}", failed.join(", ")),
            ));
        }
    }
    Ok(())
}
