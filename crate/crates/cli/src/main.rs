//! `hm`: induced objective transforms of binary-reward policy gradients.

mod args;
mod commands;
mod output;
mod spec;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use args::{
    load, BernsteinArgs, CurvesArgs, GrpoSweepArgs, RejectionCompareArgs, TrainArgs, VerifyArgs,
};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Induced objective transforms of advantage-weighted policy gradients.
///
/// Relative --out, --report and --checkpoint paths resolve against
/// $HM_OUTPUT_DIR when it is set; without --out, CSV goes to stdout.
#[derive(Parser, Debug)]
#[command(name = "hm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// h_M, its derivative and h_M / h_M(1) for each schedule, plus reference transforms.
    Curves(CurvesArgs),
    /// Normalized GRPO transforms over an M x eps grid.
    GrpoSweep(GrpoSweepArgs),
    /// Mean-of-correct h_M against log t + H_M.
    RejectionCompare(RejectionCompareArgs),
    /// Fit a schedule to a target derivative; prints the table and a fit report.
    Bernstein(BernsteinArgs),
    /// Run the self-check suite; exit status 1 if any check fails.
    Verify(VerifyArgs),
    /// Stochastic gradient ascent on a tabular softmax policy.
    Train(TrainArgs),
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Curves(a) => {
            let (file, base) = load(a.config.as_deref())?;
            commands::curves(a.merge(file, &base))?;
        }
        Command::GrpoSweep(a) => {
            let (file, _) = load(a.config.as_deref())?;
            commands::grpo_sweep(a.merge(file))?;
        }
        Command::RejectionCompare(a) => {
            let (file, _) = load(a.config.as_deref())?;
            commands::rejection_compare(a.merge(file))?;
        }
        Command::Bernstein(a) => {
            let (file, base) = load(a.config.as_deref())?;
            commands::bernstein(a.merge(file, &base))?;
        }
        Command::Verify(a) => {
            let (file, _) = load(a.config.as_deref())?;
            return commands::verify(a.merge(file));
        }
        Command::Train(a) => {
            let (file, base) = load(a.config.as_deref())?;
            commands::train(a.merge(file, &base))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
