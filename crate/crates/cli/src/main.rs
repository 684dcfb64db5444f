#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::FileConfig;
use error::CliError;

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Run(a) => commands::run::cmd_run(a, &cfg),
        Command::Datagen(a) => commands::datagen::cmd_datagen(a, &cfg),
        Command::TrainToy(a) => commands::train::cmd_train_toy(a, &cfg),
        Command::Gradcheck(a) => commands::gradcheck::cmd_gradcheck(a, &cfg),
        Command::Eval(a) => commands::eval::cmd_eval(a),
        Command::ParseKg(a) => commands::debug::cmd_parse_kg(a),
        Command::DiffPair(a) => commands::debug::cmd_diff_pair(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
