//! Command-line driver for the calibration pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use structcal::pipeline::{self, PipelineConfig};
use structcal::Result;

#[derive(Parser)]
#[command(name = "structcal", version, about = "Calibrated confidence for structured predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the generator, the sampler and the boosted trees.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth,
    /// Train the CRF.
    Train,
    /// Write Monte Carlo lattice dumps for dev and test.
    Dump,
    /// Fit forecasters with heuristic-k selection.
    Calibrate,
    /// Report calibration error and task metrics.
    Evaluate,
    /// Rescore top-k outputs with the calibrated forecaster.
    Rescore,
}

fn print<T: Serialize>(report: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if let Some(out) = cli.out {
        config.paths.out = out;
    }
    match cli.command {
        Command::Synth => print(&pipeline::cmd_synth(&config)?),
        Command::Train => print(&pipeline::cmd_train(&config)?),
        Command::Dump => print(&pipeline::cmd_dump(&config)?),
        Command::Calibrate => print(&pipeline::cmd_calibrate(&config)?),
        Command::Evaluate => print(&pipeline::cmd_evaluate(&config)?),
        Command::Rescore => print(&pipeline::cmd_rescore(&config)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
