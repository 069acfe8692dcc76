//! `sepc`: analytical FLOPs reports, scale-space verification, equivariance
//! and gradient-check suites, correlation analysis, and head demo runs.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or input error. Every
//! subcommand is deterministic under fixed flags and seed.

mod commands;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{correlate, demo, equivariance, flops, gradcheck, scale};

#[derive(Parser)]
#[command(
    name = "sepc",
    about = "Pyramid convolution analysis and verification tool",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytical FLOPs report for a pyramid head configuration
    Flops(flops::Args),
    /// Check the blur semigroup and the jumping-action composition law
    VerifyScaleSpace(scale::Args),
    /// Equivariance separation: Gaussian pyramid vs shuffled control
    Equivariance(equivariance::Args),
    /// Finite-difference checks for every hand-written derivative
    Gradcheck(gradcheck::Args),
    /// Build a head, run it on a seeded pyramid, write the output pyramids
    DemoHead(demo::Args),
    /// Correlation matrix of a stored feature pyramid
    Correlate(correlate::Args),
}

/// Check failures exit 1; malformed input and configuration errors exit 2.
pub enum Outcome {
    Ok,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Flops(args) => flops::run(args),
        Command::VerifyScaleSpace(args) => scale::run(args),
        Command::Equivariance(args) => equivariance::run(args),
        Command::Gradcheck(args) => gradcheck::run(args),
        Command::DemoHead(args) => demo::run(args),
        Command::Correlate(args) => correlate::run(args),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
