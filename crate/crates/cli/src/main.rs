//! Command line front end: microscopic and macroscopic runs and the
//! micro-macro comparison, all driven by TOML scenario files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod output;
mod run;
mod scenario;

use run::Reporter;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The scenario cannot be read or violates a requirement.
    #[error("{0}")]
    Invalid(String),
    /// A runtime guard failed for good.
    #[error("{0}")]
    Guard(String),
    /// Output files could not be written.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Guard(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "trafficfluid", version, about = "Lane-free cruise control and traffic-fluid simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the closed-loop vehicle fleet.
    RunMicro(RunArgs),
    /// Simulate the macroscopic model.
    RunMacro(RunArgs),
    /// Compare single-lane runs against the macroscopic model for several fleet sizes.
    Compare(RunArgs),
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunMicro(a) => run::run_micro(&a.scenario, &a.out, a.seed, &Reporter { quiet: a.quiet }),
        Command::RunMacro(a) => run::run_macro(&a.scenario, &a.out, a.seed, &Reporter { quiet: a.quiet }),
        Command::Compare(a) => run::run_compare(&a.scenario, &a.out, a.seed, &Reporter { quiet: a.quiet }),
        Command::Validate { scenario, quiet } => run::validate(scenario, &Reporter { quiet: *quiet }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Invalid(_) => "invalid scenario",
                CliError::Guard(_) => "guard failure",
                CliError::Io(_) => "output error",
            };
            eprintln!("error: {kind}\n{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
