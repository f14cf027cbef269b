//! `conscal`: synthesize, validate, train, score and evaluate confidence
//! calibrators over line-delimited generation logs.
//!
//! Exit status is 0 on success, 1 on invalid data and 2 on usage or file errors.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{CommonArgs, KMeaning, RunConfig};
use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "conscal", version, about = "Unsupervised confidence calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset with a truth sidecar.
    Synth,
    /// Check record files and report every diagnostic.
    Validate,
    /// Write one self-consistency target per query.
    Targets,
    /// Fit a calibrator and write the model artifact.
    Train,
    /// Score every generation with a trained model.
    Score,
    /// Repeated calibration/test splits over all methods.
    Eval,
    /// Selective-prediction curves over repeated splits.
    Selective,
    /// Train on some query groups and evaluate on others.
    Shift,
}

fn run(cli: &Cli) -> CliResult<()> {
    let k_meaning = match cli.command {
        Command::Synth => KMeaning::SamplesPerQuery,
        _ => KMeaning::Subsample,
    };
    let cfg = RunConfig::resolve(&cli.common, k_meaning)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Validate => commands::validate(&cfg),
        Command::Targets => commands::targets(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Score => commands::score(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Selective => commands::selective(&cfg),
        Command::Shift => commands::shift(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
