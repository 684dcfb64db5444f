use std::io::{BufWriter, Write};
use std::path::PathBuf;

use kare_core::datagen::read_pairs;
use kare_core::ddpo::train::{
    problem_from_samples, train_toy, write_metrics_csv, SyntheticSpec, TrainOptions,
    DEFAULT_MAX_VOCAB,
};
use kare_core::ddpo::{DdpoConfig, WeightSide, DEFAULT_TOY_LR};
use serde::Serialize;

use crate::args::{LossArgs, TrainArgs, WeightSideArg};
use crate::config::{parse_choice, FileConfig};
use crate::error::{io_at, CliError};
use crate::manifest::ManifestBuilder;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ORDER: usize = 2;

pub fn resolve_loss(a: &LossArgs, cfg: &FileConfig) -> Result<DdpoConfig, CliError> {
    let d = DdpoConfig::default();
    let c = &cfg.ddpo;
    let side = a
        .weight_side
        .or(parse_choice("weight_side", c.weight_side.as_deref())?)
        .unwrap_or(WeightSideArg::Both);
    let loss = DdpoConfig {
        beta: a.beta.or(c.beta).unwrap_or(d.beta),
        gamma: a.gamma.or(c.gamma).unwrap_or(d.gamma),
        alpha: a.alpha.or(c.alpha).unwrap_or(d.alpha),
        sft_normalize: a.sft_normalize || c.sft_normalize.unwrap_or(false),
        weight_side: match side {
            WeightSideArg::Both => WeightSide::Both,
            WeightSideArg::Chosen => WeightSide::Chosen,
        },
    };
    loss.validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(loss)
}

#[derive(Debug, Serialize)]
struct Config<'a> {
    loss: &'a DdpoConfig,
    sft_on: &'static str,
    pairs: Option<&'a PathBuf>,
    order: usize,
    synthetic: Option<SyntheticSpec>,
    train: TrainOptions,
    seed: u64,
}

pub fn cmd_train_toy(args: TrainArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let loss = resolve_loss(&args.loss, cfg)?;
    let t = &cfg.train;
    let opts = TrainOptions {
        steps: args
            .steps
            .or(t.steps)
            .unwrap_or(TrainOptions::default().steps),
        lr: args.lr.or(t.lr).unwrap_or(DEFAULT_TOY_LR),
    };
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(CliError::usage("--lr must be positive"));
    }
    let seed = args.seed.or(t.seed).unwrap_or(DEFAULT_SEED);
    let order = args.order.or(t.order).unwrap_or(DEFAULT_ORDER);
    let synthetic = args.pairs.is_none().then(SyntheticSpec::default);
    let mut manifest = ManifestBuilder::start(
        "train-toy",
        &Config {
            loss: &loss,
            sft_on: "chosen",
            pairs: args.pairs.as_ref(),
            order,
            synthetic: synthetic.clone(),
            train: opts,
            seed,
        },
    )?
    .seed(seed);

    let problem = match (&args.pairs, synthetic) {
        (Some(path), _) => {
            manifest = manifest.input(path);
            let f = std::fs::File::open(path).map_err(io_at(path))?;
            let samples = read_pairs(std::io::BufReader::new(f))?;
            if samples.is_empty() {
                return Err(CliError::data(
                    "EmptyBatch",
                    format!("{} has no pairs", path.display()),
                ));
            }
            problem_from_samples(&samples, order, 1.0, DEFAULT_MAX_VOCAB, seed)?
        }
        (None, Some(spec)) => spec.build(seed)?,
        (None, None) => unreachable!(),
    };
    let outcome = train_toy(&problem, &loss, &opts)?;

    let path = &args.metrics;
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io_at(path))?);
    write_metrics_csv(&mut w, &outcome.metrics).map_err(io_at(path))?;
    w.flush().map_err(io_at(path))?;
    let mut outputs = vec![path.as_path()];
    if let Some(ck) = &args.checkpoint {
        outcome.policy.save(ck).map_err(io_at(ck))?;
        outputs.push(ck);
    }
    manifest.finish(path, &outputs)?;

    let last = outcome.last();
    println!(
        "step {}: loss {:.6} reward_chosen {:.6} reward_rejected {:.6} accuracy {:.3} margin {:.6}",
        last.step,
        last.loss,
        last.reward_chosen,
        last.reward_rejected,
        last.reward_accuracy,
        last.reward_margin
    );
    Ok(())
}
