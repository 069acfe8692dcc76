use std::path::PathBuf;

use clap::Parser;

use sepc_core::analysis::{equivariance_separation, sig6};
use sepc_core::Result;

use crate::output::emit;
use crate::Outcome;

#[derive(Parser)]
pub struct Args {
    /// Side length of the synthetic base image
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Gaussian-pyramid levels
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// Jump distance applied to the convolved pyramid
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Initial pyramid scale
    #[arg(long, default_value_t = 2.0)]
    s0: f64,
    /// Required separation between the control and Gaussian errors
    #[arg(long, default_value_t = 5.0)]
    min_ratio: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Key=value configuration file (only the seed key applies here)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<Outcome> {
    let seed = super::resolve_seed(args.seed, &super::load_config(&args.config)?)?;
    let check = equivariance_separation(args.size, args.levels, args.m, args.s0, seed)?;
    let ok = check.ratio >= args.min_ratio;
    let report = format!(
        "equivariance size={} levels={} m={} s0={} seed={} gaussian={} control={} ratio={} min_ratio={} status={}\n",
        args.size,
        args.levels,
        args.m,
        sig6(args.s0),
        seed,
        sig6(check.gaussian_error),
        sig6(check.control_error),
        sig6(check.ratio),
        sig6(args.min_ratio),
        if ok { "ok" } else { "fail" }
    );
    emit(&args.out, &report)?;
    Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
}
