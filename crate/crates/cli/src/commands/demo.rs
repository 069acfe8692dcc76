use std::path::PathBuf;

use clap::Parser;

use sepc_core::analysis::sig6;
use sepc_core::config::parse_variant;
use sepc_core::pconv::{FeaturePyramid, HeadConfig};
use sepc_core::sepc::build_head_variant;
use sepc_core::synth::band_limited_noise;
use sepc_core::tensor::{pyramid_read, pyramid_write};
use sepc_core::{Error, Result};

use crate::Outcome;

#[derive(Parser)]
pub struct Args {
    /// SEPC variant to build: none, lite, or full
    #[arg(long, default_value = "none")]
    variant: String,
    /// Also run this variant (same seed) and print output differences
    #[arg(long)]
    compare_variant: Option<String>,
    /// Base level side length of the synthetic pyramid
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Pyramid levels
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Head channels (overrides the config file)
    #[arg(long)]
    channels: Option<usize>,
    /// Read the input pyramid from a SPYR file instead of synthesizing it
    #[arg(long)]
    input: Option<PathBuf>,
    /// Key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file prefix: writes <prefix>_cls.spyr and <prefix>_loc.spyr
    #[arg(long, default_value = "demo")]
    out: String,
    #[arg(long)]
    seed: Option<u64>,
}

fn synthesize_pyramid(levels: usize, size: usize, channels: usize, seed: u64) -> Result<FeaturePyramid> {
    if levels == 0 {
        return Err(Error::InsufficientLevels { need: 1, got: 0 });
    }
    let factor = 1usize << (levels - 1);
    if size % factor != 0 || size / factor == 0 {
        return Err(Error::IndivisibleDims {
            axis: "size",
            dim: size,
            divisor: factor,
        });
    }
    FeaturePyramid::new(
        (0..levels)
            .map(|l| band_limited_noise((1, channels, size >> l, size >> l), seed + l as u64, 1.0))
            .collect::<Result<Vec<_>>>()?,
    )
}

fn forward(
    cfg: &HeadConfig,
    levels: usize,
    seed: u64,
    p: &FeaturePyramid,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    let mut head = build_head_variant(cfg, levels, seed)?;
    head.forward(p)
}

pub fn run(args: Args) -> Result<Outcome> {
    let file = super::load_config(&args.config)?;
    let mut cfg = HeadConfig::default();
    file.apply_head(&mut cfg)?;
    cfg.sepc_variant = parse_variant(&args.variant)?;
    if let Some(c) = args.channels {
        cfg.channels = c;
    }
    let seed = super::resolve_seed(args.seed, &file)?;

    let pyramid = match &args.input {
        Some(path) => FeaturePyramid::new(pyramid_read(path)?)?,
        None => synthesize_pyramid(args.levels, args.size, cfg.channels, seed)?,
    };
    let levels = pyramid.len();

    let (cls, loc) = forward(&cfg, levels, seed, &pyramid)?;

    println!(
        "demo-head variant={} seed={seed} levels={levels} channels={} stacks={}",
        args.variant, cfg.channels, cfg.stacks
    );
    for (suffix, out) in [("cls", &cls), ("loc", &loc)] {
        let path = format!("{}_{suffix}.spyr", args.out);
        pyramid_write(out.levels(), &path)?;
        let (_, c, h, w) = out.level(0).dims();
        println!("wrote {path} levels={} channels={c} base={h}x{w}", out.len());
    }

    if let Some(other) = &args.compare_variant {
        let mut cfg2 = cfg.clone();
        cfg2.sepc_variant = parse_variant(other)?;
        let (cls2, loc2) = forward(&cfg2, levels, seed, &pyramid)?;
        println!(
            "compare variant={other} max_abs_diff_cls={} max_abs_diff_loc={}",
            sig6(cls.max_abs_diff(&cls2)),
            sig6(loc.max_abs_diff(&loc2))
        );
    }
    Ok(Outcome::Ok)
}
