use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::{GenerateArgs, ReproduceArgs, Status, SweepArgs, VerifyArgs};
use config::Common;

/// Rank-one tensor approximation by alternating least squares.
///
/// Exit status: 0 converged, 2 sweep budget exhausted, 1 error.
#[derive(Parser, Debug)]
#[command(name = "rankone", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve once; writes the trace CSV, rate report and plot script
    Run(Common),
    /// Solve over a grid of τ, λ or seeds and write a summary CSV
    Sweep(SweepArgs),
    /// Check stationarity and optimality certificates of a point
    Verify(VerifyArgs),
    /// Write a generated tensor to a file
    Generate(GenerateArgs),
    /// Rerun a canned experiment and write its CSV and plot script
    Reproduce(ReproduceArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => commands::run(c),
        Command::Sweep(a) => commands::sweep(a),
        Command::Verify(a) => commands::verify(a),
        Command::Generate(a) => commands::generate(a),
        Command::Reproduce(a) => commands::reproduce(a),
    };
    match result {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Status::Failed.code())
        }
    }
}
