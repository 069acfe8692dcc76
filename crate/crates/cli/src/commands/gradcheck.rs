use std::path::PathBuf;

use clap::Parser;

use sepc_core::analysis::sig6;
use sepc_core::gradcheck::run_all;
use sepc_core::Result;

use crate::output::emit;
use crate::Outcome;

#[derive(Parser)]
pub struct Args {
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
    let results = run_all(super::resolve_seed(args.seed, &super::load_config(&args.config)?)?)?;
    let mut report = String::new();
    let mut all_ok = true;
    for r in &results {
        all_ok &= r.passed();
        report.push_str(&format!(
            "{} max_rel_err={} tolerance={} status={}\n",
            r.name,
            sig6(r.max_rel_err),
            sig6(r.tolerance),
            if r.passed() { "ok" } else { "fail" }
        ));
    }
    emit(&args.out, &report)?;
    Ok(if all_ok { Outcome::Ok } else { Outcome::CheckFailed })
}
