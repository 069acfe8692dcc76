use std::path::PathBuf;

use clap::Parser;

use sepc_core::analysis::{flops_report, CostModelInput};
use sepc_core::config::{parse_size_mode, parse_variant};
use sepc_core::pconv::HeadConfig;
use sepc_core::Result;

use crate::output::emit;
use crate::Outcome;

// Published reference values for the default configuration.
const PAPER_C_TOTAL: f64 = 1.4985;
const PAPER_HEAD_RATIO: f64 = 0.99925;
const CHECK_TOLERANCE: f64 = 5e-4;

#[derive(Parser)]
pub struct Args {
    /// Number of stacked pyramid convolutions
    #[arg(long)]
    stacks: Option<usize>,
    /// Head sharing: combined (one shared stack) or separate branches
    #[arg(long, value_parser = ["combined", "separate"])]
    head: Option<String>,
    /// Drop the per-branch extra convolution from the model
    #[arg(long)]
    no_extra_conv: bool,
    /// SEPC variant: none, lite, or full
    #[arg(long)]
    sepc: Option<String>,
    /// Scale extent of the stacks: 3 (pyramid conv) or 1 (plain conv)
    #[arg(long)]
    scale_extent: Option<usize>,
    /// Number of pyramid levels, starting at stride 8
    #[arg(long)]
    levels: Option<usize>,
    /// Feature-map sizing: fractional (exact reals) or ceil (integers)
    #[arg(long)]
    size_mode: Option<String>,
    /// Input image height
    #[arg(long)]
    image_h: Option<usize>,
    /// Input image width
    #[arg(long)]
    image_w: Option<usize>,
    /// Head channels
    #[arg(long)]
    channels: Option<usize>,
    /// Kernel size (odd)
    #[arg(long)]
    kernel: Option<usize>,
    /// Exit nonzero if C_total or head_ratio deviates from the published
    /// reference values by more than 5e-4 (meaningful for default settings)
    #[arg(long)]
    check: bool,
    /// Key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the CSV report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Unused by this subcommand; accepted for flag uniformity
    #[arg(long, default_value_t = 0)]
    #[allow(dead_code)]
    seed: u64,
}

pub fn run(args: Args) -> Result<Outcome> {
    let file = super::load_config(&args.config)?;
    let mut cfg = HeadConfig::default();
    // Output convolutions cancel in the ratio; keep them unset unless the
    // config file asks.
    cfg.outputs = None;
    file.apply_head(&mut cfg)?;
    let mut inp = CostModelInput::default();
    file.apply_cost(&mut inp)?;

    if let Some(v) = args.stacks {
        cfg.stacks = v;
    }
    if let Some(v) = &args.head {
        cfg.combined = v == "combined";
    }
    if args.no_extra_conv {
        cfg.extra_conv = false;
    }
    if let Some(v) = &args.sepc {
        cfg.sepc_variant = parse_variant(v)?;
    }
    if let Some(v) = args.scale_extent {
        cfg.scale_extent = v;
    }
    if let Some(v) = args.levels {
        inp.strides = (0..v).map(|l| 8 << l).collect();
    }
    if let Some(v) = &args.size_mode {
        inp.size_mode = parse_size_mode(v)?;
    }
    if let Some(v) = args.image_h {
        inp.image.1 = v;
    }
    if let Some(v) = args.image_w {
        inp.image.2 = v;
    }
    if let Some(v) = args.channels {
        inp.channels = v;
        cfg.channels = v;
    }
    if let Some(v) = args.kernel {
        inp.kernel = (v, v);
    }

    let report = flops_report(&cfg, &inp)?;
    emit(&args.out, &report.to_csv())?;

    if args.check {
        let c_ok = (report.c_total - PAPER_C_TOTAL).abs() <= CHECK_TOLERANCE;
        let r_ok = (report.head_ratio - PAPER_HEAD_RATIO).abs() <= CHECK_TOLERANCE;
        if !(c_ok && r_ok) {
            eprintln!(
                "check failed: C_total {} (reference {PAPER_C_TOTAL}), head_ratio {} (reference {PAPER_HEAD_RATIO})",
                report.c_total, report.head_ratio
            );
            return Ok(Outcome::CheckFailed);
        }
    }
    Ok(Outcome::Ok)
}
