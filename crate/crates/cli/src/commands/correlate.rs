use std::path::PathBuf;

use clap::Parser;

use sepc_core::analysis::{correlation_matrix, sig6};
use sepc_core::pconv::FeaturePyramid;
use sepc_core::tensor::pyramid_read;
use sepc_core::Result;

use crate::output::emit;
use crate::Outcome;

#[derive(Parser)]
pub struct Args {
    /// SPYR pyramid file to analyze
    #[arg(long)]
    input: PathBuf,
    /// Write the CSV matrix here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Unused by this subcommand; accepted for flag uniformity
    #[arg(long, default_value_t = 0)]
    #[allow(dead_code)]
    seed: u64,
    /// Unused by this subcommand; accepted for flag uniformity
    #[arg(long)]
    #[allow(dead_code)]
    config: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<Outcome> {
    let pyramid = FeaturePyramid::new(pyramid_read(&args.input)?)?;
    let report = correlation_matrix(&pyramid)?;
    let mut csv = String::new();
    for row in &report.matrix {
        let cells: Vec<String> = row.iter().map(|&v| sig6(v)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    for level in &report.constant_levels {
        csv.push_str(&format!("constant_level,{level}\n"));
    }
    emit(&args.out, &csv)?;
    Ok(Outcome::Ok)
}
