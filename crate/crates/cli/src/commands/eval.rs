use std::path::PathBuf;

use kare_core::eval::{aggregate, evaluate_run, EvalResult, GoldRecord, PredictionRecord};
use serde::Serialize;

use super::read_jsonl;
use crate::args::EvalArgs;
use crate::error::{io_at, CliError};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Serialize)]
struct RunScore {
    pred: String,
    em: f64,
    f1: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct Report {
    em: f64,
    f1: f64,
    n: usize,
    runs: usize,
    per_run: Vec<RunScore>,
}

#[derive(Debug, Serialize)]
struct Config<'a> {
    pred: &'a [PathBuf],
    gold: &'a PathBuf,
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let gold: Vec<GoldRecord> = read_jsonl(&args.gold)?;
    let mut runs: Vec<EvalResult> = Vec::with_capacity(args.pred.len());
    for path in &args.pred {
        let preds: Vec<PredictionRecord> = read_jsonl(path)?;
        runs.push(evaluate_run(&preds, &gold)?);
    }
    let total = aggregate(&runs)?;
    let report = Report {
        em: total.em,
        f1: total.f1,
        n: total.n,
        runs: total.runs,
        per_run: args
            .pred
            .iter()
            .zip(&runs)
            .map(|(p, r)| RunScore {
                pred: p.display().to_string(),
                em: r.em,
                f1: r.f1,
                n: r.n,
            })
            .collect(),
    };
    if runs.len() > 1 {
        for r in &report.per_run {
            println!("{}: EM {:.1} / F1 {:.1} (n={})", r.pred, r.em, r.f1, r.n);
        }
    }
    println!("EM {:.1} / F1 {:.1}", report.em, report.f1);

    if let Some(out) = &args.out {
        let mut manifest = ManifestBuilder::start(
            "eval",
            &Config {
                pred: &args.pred,
                gold: &args.gold,
            },
        )?
        .input(&args.gold);
        for p in &args.pred {
            manifest = manifest.input(p);
        }
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(out, text + "\n").map_err(io_at(out))?;
        manifest.finish(out, &[out])?;
    }
    Ok(())
}
