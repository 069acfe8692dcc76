//! Analytical FLOPs model for pyramid heads, in multiply-accumulate units:
//! one MAC per kernel tap, FLOPs = C_in * K_h * K_w * H * W * C_out for a
//! single convolution.

use crate::error::{Error, Result};
use crate::pconv::{HeadConfig, SepcVariant};
use crate::tensor::{Conv2dKernel, Tensor};

use super::sig6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeMode {
    /// Exact geometric sizes (1280/128 = 10 by 800/128 = 6.25). Default;
    /// the only mode that reproduces the published area-ratio list.
    Fractional,
    /// Integer ceil sizes, matching real tensor shapes.
    Ceil,
}

/// Inputs of the cost model.
#[derive(Debug, Clone)]
pub struct CostModelInput {
    /// Image dims (C_img, H_img, W_img).
    pub image: (usize, usize, usize),
    /// Pyramid strides, bottom-up; contiguous powers of two.
    pub strides: Vec<usize>,
    /// Head channels C (both C_in and C_out).
    pub channels: usize,
    /// Kernel size (K_h, K_w).
    pub kernel: (usize, usize),
    pub size_mode: SizeMode,
}

impl Default for CostModelInput {
    fn default() -> Self {
        Self {
            image: (3, 1280, 800),
            strides: vec![8, 16, 32, 64, 128],
            channels: 256,
            kernel: (3, 3),
            size_mode: SizeMode::Fractional,
        }
    }
}

impl CostModelInput {
    /// Strides for `levels` pyramid levels starting at P3 (stride 8).
    pub fn with_levels(levels: usize) -> Self {
        Self {
            strides: (0..levels).map(|l| 8 << l).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() {
            return Err(Error::InvalidConfig("at least one stride required".into()));
        }
        for s in &self.strides {
            if !s.is_power_of_two() {
                return Err(Error::InvalidConfig(format!(
                    "stride {s} is not a power of two"
                )));
            }
        }
        for pair in self.strides.windows(2) {
            if pair[1] != 2 * pair[0] {
                return Err(Error::InvalidConfig(
                    "strides must be contiguous (each twice the previous)".into(),
                ));
            }
        }
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return Err(Error::InvalidConfig("kernel sizes must be odd".into()));
        }
        Ok(())
    }

    /// Per-level feature-map sizes, bottom-up.
    pub fn level_sizes(&self) -> Vec<(f64, f64)> {
        let (_, h, w) = self.image;
        self.strides
            .iter()
            .map(|&s| {
                let (hf, wf) = (h as f64 / s as f64, w as f64 / s as f64);
                match self.size_mode {
                    SizeMode::Fractional => (hf, wf),
                    SizeMode::Ceil => (hf.ceil(), wf.ceil()),
                }
            })
            .collect()
    }

    /// Level labels: P3 for stride 8 and so on.
    pub fn level_names(&self) -> Vec<String> {
        self.strides
            .iter()
            .map(|s| format!("P{}", s.trailing_zeros()))
            .collect()
    }
}

/// MACs of one convolution: C_in * K_h * K_w * H * W * C_out.
pub fn flops_conv2d(c_in: f64, k_h: f64, k_w: f64, h: f64, w: f64, c_out: f64) -> f64 {
    c_in * k_h * k_w * h * w * c_out
}

/// MACs of one deformable convolution: the offset-prediction convolution and
/// the per-sample bilinear interpolation folded into a lumped factor
/// (1 + (8 + 2*K_h*K_w)/C_out) on the plain cost. The published formula is an
/// approximation, not an exact tap count.
pub fn flops_deform_conv2d(c_in: f64, k_h: f64, k_w: f64, h: f64, w: f64, c_out: f64) -> f64 {
    deform_overhead_factor(k_h, k_w, c_out) * flops_conv2d(c_in, k_h, k_w, h, w, c_out)
}

/// The lumped deformable-convolution overhead factor.
pub fn deform_overhead_factor(k_h: f64, k_w: f64, c_out: f64) -> f64 {
    1.0 + (8.0 + 2.0 * k_h * k_w) / c_out
}

/// Per-level spatial area ratios r_l = H_l*W_l / sum(H*W), bottom-up.
pub fn pyramid_area_ratios(inp: &CostModelInput) -> Result<Vec<f64>> {
    inp.validate()?;
    let areas: Vec<f64> = inp.level_sizes().iter().map(|&(h, w)| h * w).collect();
    let total: f64 = areas.iter().sum();
    Ok(areas.iter().map(|a| a / total).collect())
}

/// Relative per-level cost of one pyramid convolution against one plain
/// convolution: 1 for the same-level term everywhere, +1 for the stride-2
/// term above the bottom, +0.25 for the upsampled term below the top
/// (upsample cost itself excluded). Returns (c_l bottom-up, C_total).
pub fn pconv_cost_factors(inp: &CostModelInput) -> Result<(Vec<f64>, f64)> {
    let ratios = pyramid_area_ratios(inp)?;
    let count = ratios.len();
    let factors: Vec<f64> = (0..count)
        .map(|l| {
            if count == 1 {
                1.0
            } else if l == 0 {
                1.25
            } else if l == count - 1 {
                2.0
            } else {
                2.25
            }
        })
        .collect();
    let c_total = factors.iter().zip(ratios.iter()).map(|(c, r)| c * r).sum();
    Ok((factors, c_total))
}

/// Deformed-term cost share for a SEPC stack layer, in plain-conv units:
/// every term whose input level sits above the pyramid bottom carries the
/// deform overhead fraction.
fn sepc_stack_deformed_share(ratios: &[f64]) -> f64 {
    let count = ratios.len();
    if count < 2 {
        return 0.0;
    }
    let above: f64 = ratios[1..].iter().sum();
    // Same-level terms above the bottom.
    let mut share = above;
    // Upsampled terms: input level l+1 is always above the bottom; the term
    // at output level l costs 0.25 * r_l.
    share += ratios[..count - 1].iter().map(|r| 0.25 * r).sum::<f64>();
    // Stride-2 terms read level l-1, above the bottom only for l >= 2.
    share += ratios[2..].iter().sum::<f64>();
    share
}

/// Deform overheads of the configured head in plain-conv units per deformed
/// convolution. Zero when the variant does not deform that part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SepcOverheads {
    /// Extra-head convolution overhead: (sum of above-bottom r_l) * f.
    pub per_extra_conv: f64,
    /// Stack-layer overhead (Full only): deformed-term share * f.
    pub per_stack_conv: f64,
}

/// Ratio of the configured head's MACs to the baseline head: two branches of
/// `stacks` plain convolutions. Output convolutions appear in both and cancel.
pub fn head_flops_ratio(cfg: &HeadConfig, inp: &CostModelInput) -> Result<f64> {
    Ok(flops_report(cfg, inp)?.head_ratio)
}

/// Per-level cost table row.
#[derive(Debug, Clone)]
pub struct LevelCost {
    pub name: String,
    pub h: f64,
    pub w: f64,
    pub area_ratio: f64,
    pub cost_factor: f64,
    /// MACs of one pyramid convolution applied at this level.
    pub macs: f64,
}

/// The full analytical report.
#[derive(Debug, Clone)]
pub struct FlopsReport {
    pub levels: Vec<LevelCost>,
    pub c_total: f64,
    pub head_ratio: f64,
    pub sepc_overheads: SepcOverheads,
    pub variant: SepcVariant,
}

pub fn flops_report(cfg: &HeadConfig, inp: &CostModelInput) -> Result<FlopsReport> {
    cfg.validate()?;
    let ratios = pyramid_area_ratios(inp)?;
    let (factors, c_total) = pconv_cost_factors(inp)?;
    let sizes = inp.level_sizes();
    let names = inp.level_names();
    let (k_h, k_w) = (inp.kernel.0 as f64, inp.kernel.1 as f64);
    let c = inp.channels as f64;

    let levels = names
        .into_iter()
        .zip(sizes)
        .zip(ratios.iter().zip(factors.iter()))
        .map(|((name, (h, w)), (&r, &cf))| LevelCost {
            name,
            h,
            w,
            area_ratio: r,
            cost_factor: cf,
            macs: cf * flops_conv2d(c, k_h, k_w, h, w, c),
        })
        .collect();

    let f = deform_overhead_factor(k_h, k_w, c) - 1.0;
    let above: f64 = ratios[1..].iter().sum();
    let overheads = SepcOverheads {
        per_extra_conv: match cfg.sepc_variant {
            SepcVariant::None => 0.0,
            _ => f * above,
        },
        per_stack_conv: match cfg.sepc_variant {
            SepcVariant::Full => match cfg.scale_extent {
                1 => f * above,
                _ => f * sepc_stack_deformed_share(&ratios),
            },
            _ => 0.0,
        },
    };

    let stack_unit = match cfg.scale_extent {
        1 => 1.0,
        _ => c_total,
    } + overheads.per_stack_conv;
    let branch_count = if cfg.combined { 1.0 } else { 2.0 };
    let stacks_cost = branch_count * cfg.stacks as f64 * stack_unit;
    let extra_cost = if cfg.extra_conv {
        2.0 * (1.0 + overheads.per_extra_conv)
    } else {
        0.0
    };
    let baseline = 2.0 * cfg.stacks as f64;
    let head_ratio = (stacks_cost + extra_cost) / baseline;

    Ok(FlopsReport {
        levels,
        c_total,
        head_ratio,
        sepc_overheads: overheads,
        variant: cfg.sepc_variant,
    })
}

impl FlopsReport {
    /// CSV form: header, one row per level, then aggregate rows. Reals are
    /// printed with 6 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,H,W,r,c,macs\n");
        for l in &self.levels {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.name,
                sig6(l.h),
                sig6(l.w),
                sig6(l.area_ratio),
                sig6(l.cost_factor),
                sig6(l.macs)
            ));
        }
        out.push_str(&format!("C_total,{}\n", sig6(self.c_total)));
        out.push_str(&format!("head_ratio,{}\n", sig6(self.head_ratio)));
        if self.variant != SepcVariant::None {
            out.push_str(&format!(
                "sepc_extra_overhead_per_conv,{}\n",
                sig6(self.sepc_overheads.per_extra_conv)
            ));
        }
        if self.variant == SepcVariant::Full {
            out.push_str(&format!(
                "sepc_stack_overhead_per_conv,{}\n",
                sig6(self.sepc_overheads.per_stack_conv)
            ));
        }
        out
    }
}

/// Instrumented execution counter: runs the convolution loop nest and counts
/// one MAC per kernel tap, padded taps included (the analytical convention).
/// On stride-1 same-padding shapes this reproduces [`flops_conv2d`] with the
/// input feature-map size exactly; in general the H, W of the formula are the
/// output dims.
pub fn measured_conv2d_macs(x: &Tensor, k: &Conv2dKernel) -> Result<f64> {
    let (n, c_in, h, w) = x.dims();
    if c_in != k.c_in() {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: k.c_in(),
            got: c_in,
        });
    }
    let (oh, ow) = k.out_size(h, w)?;
    let (c_out, _, k_h, k_w) = k.weights.dims();
    let mut macs = 0u64;
    let mut sink = 0.0;
    for b in 0..n {
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ic in 0..c_in {
                        for u in 0..k_h {
                            for v in 0..k_w {
                                let iy = (oy * k.stride + u) as i64 - k.padding as i64;
                                let ix = (ox * k.stride + v) as i64 - k.padding as i64;
                                let value = if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64
                                {
                                    x.at(b, ic, iy as usize, ix as usize)
                                } else {
                                    0.0
                                };
                                sink += k.weights.at(oc, ic, u, v) * value;
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    // The accumulator exists so the loop above really is an execution, not a
    // closed-form product.
    std::hint::black_box(sink);
    Ok(macs as f64)
}
