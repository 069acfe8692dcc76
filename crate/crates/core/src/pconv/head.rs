//! The stacked pyramid-convolution detection head: a shared (or per-branch)
//! stack of pyramid convolutions with BN and ReLU, one extra per-branch
//! convolution of scale extent 1, and optional final output convolutions
//! mapping to K*C classification and 4K localization channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bn::{bn_forward, bn_vjp, BNState, BnGrads, BnMode};
use super::layer::{kaiming_kernel, pconv_forward, pconv_vjp, PConvLayer, PConvLayerGrads};
use super::pyramid::FeaturePyramid;
use crate::error::{Error, Result};
use crate::sepc::{
    sepc_forward, sepc_vjp, LevelConv, LevelConvGrads, SepcLayer, SepcLayerGrads,
};
use crate::synth::{band_limited_noise, uniform_noise};
use crate::tensor::{conv2d, conv2d_vjp, Conv2dKernel, KernelGrad};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepcVariant {
    None,
    Lite,
    Full,
}

/// Final-convolution sizing: C classes and K anchors per location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadOutputs {
    pub num_classes: usize,
    pub anchors: usize,
}

/// Head configuration. `scale_extent` selects between full pyramid
/// convolutions (3) and plain per-level convolutions (1, the classic head
/// viewed as a pyramid convolution with a scale kernel of one).
#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub stacks: usize,
    pub channels: usize,
    pub combined: bool,
    pub extra_conv: bool,
    pub bn_mode: Option<BnMode>,
    pub sepc_variant: SepcVariant,
    pub scale_extent: usize,
    pub outputs: Option<HeadOutputs>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            stacks: 4,
            channels: 256,
            combined: true,
            extra_conv: true,
            bn_mode: Some(BnMode::Integrated),
            sepc_variant: SepcVariant::None,
            scale_extent: 3,
            outputs: None,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=6).contains(&self.stacks) {
            return Err(Error::InvalidConfig(format!(
                "stacks must be in [2, 6], got {}",
                self.stacks
            )));
        }
        if self.channels < 1 {
            return Err(Error::InvalidConfig("channels must be >= 1".into()));
        }
        if self.scale_extent != 1 && self.scale_extent != 3 {
            return Err(Error::InvalidConfig(format!(
                "scale_extent must be 1 or 3, got {}",
                self.scale_extent
            )));
        }
        if let Some(o) = &self.outputs {
            if o.num_classes < 1 || o.anchors < 1 {
                return Err(Error::InvalidConfig(
                    "num_classes and anchors must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One stack step: a pyramid (or per-level) convolution layer.
#[derive(Debug, Clone)]
pub enum StackLayer {
    Pyramid(PConvLayer),
    PyramidSepc(SepcLayer),
    Level(LevelConv),
}

#[derive(Debug, Clone)]
pub struct Stack {
    pub layer: StackLayer,
    pub bn: Option<BNState>,
}

/// The non-shared extra convolution at the end of a branch.
#[derive(Debug, Clone)]
pub struct ExtraConv {
    pub conv: LevelConv,
    pub bn: Option<BNState>,
}

#[derive(Debug, Clone)]
pub enum Branches {
    Combined(Vec<Stack>),
    Split { cls: Vec<Stack>, loc: Vec<Stack> },
}

/// A built head: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Head {
    pub cfg: HeadConfig,
    pub levels: usize,
    pub branches: Branches,
    pub extra_cls: Option<ExtraConv>,
    pub extra_loc: Option<ExtraConv>,
    pub final_cls: Option<Conv2dKernel>,
    pub final_loc: Option<Conv2dKernel>,
}

fn build_stack(cfg: &HeadConfig, levels: usize, rng: &mut ChaCha8Rng) -> Stack {
    let c = cfg.channels;
    let layer = match (cfg.scale_extent, cfg.sepc_variant) {
        (3, SepcVariant::Full) => {
            StackLayer::PyramidSepc(SepcLayer::new(PConvLayer::kaiming(c, c, 3, false, rng)))
        }
        (3, _) => StackLayer::Pyramid(PConvLayer::kaiming(c, c, 3, false, rng)),
        (_, SepcVariant::Full) => {
            StackLayer::Level(LevelConv::with_zero_predictor(kaiming_kernel(
                c, c, 3, 1, false, rng,
            )))
        }
        _ => StackLayer::Level(LevelConv::plain(kaiming_kernel(c, c, 3, 1, false, rng))),
    };
    Stack {
        layer,
        bn: cfg.bn_mode.map(|m| BNState::new(m, c, levels)),
    }
}

fn build_extra(cfg: &HeadConfig, levels: usize, rng: &mut ChaCha8Rng) -> ExtraConv {
    let c = cfg.channels;
    let kernel = kaiming_kernel(c, c, 3, 1, false, rng);
    let conv = match cfg.sepc_variant {
        SepcVariant::None => LevelConv::plain(kernel),
        _ => LevelConv::with_zero_predictor(kernel),
    };
    ExtraConv {
        conv,
        bn: cfg.bn_mode.map(|m| BNState::new(m, c, levels)),
    }
}

impl Head {
    /// Build a head with Kaiming-initialized kernels from a seeded generator.
    /// Offset predictors (Lite/Full variants) start at exactly zero.
    pub fn build(cfg: &HeadConfig, levels: usize, seed: u64) -> Result<Head> {
        cfg.validate()?;
        if levels < 1 {
            return Err(Error::InsufficientLevels { need: 1, got: 0 });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches = if cfg.combined {
            Branches::Combined((0..cfg.stacks).map(|_| build_stack(cfg, levels, &mut rng)).collect())
        } else {
            Branches::Split {
                cls: (0..cfg.stacks).map(|_| build_stack(cfg, levels, &mut rng)).collect(),
                loc: (0..cfg.stacks).map(|_| build_stack(cfg, levels, &mut rng)).collect(),
            }
        };
        let (extra_cls, extra_loc) = if cfg.extra_conv {
            (
                Some(build_extra(cfg, levels, &mut rng)),
                Some(build_extra(cfg, levels, &mut rng)),
            )
        } else {
            (None, None)
        };
        let (final_cls, final_loc) = match &cfg.outputs {
            Some(o) => (
                Some(kaiming_kernel(
                    o.anchors * o.num_classes,
                    cfg.channels,
                    3,
                    1,
                    false,
                    &mut rng,
                )),
                Some(kaiming_kernel(4 * o.anchors, cfg.channels, 3, 1, false, &mut rng)),
            ),
            None => (None, None),
        };
        Ok(Head {
            cfg: cfg.clone(),
            levels,
            branches,
            extra_cls,
            extra_loc,
            final_cls,
            final_loc,
        })
    }

    /// Toggle training mode on every BN state.
    pub fn set_training(&mut self, training: bool) {
        let set = |stacks: &mut Vec<Stack>| {
            for s in stacks {
                if let Some(bn) = &mut s.bn {
                    bn.training = training;
                }
            }
        };
        match &mut self.branches {
            Branches::Combined(stacks) => set(stacks),
            Branches::Split { cls, loc } => {
                set(cls);
                set(loc);
            }
        }
        for extra in [&mut self.extra_cls, &mut self.extra_loc].into_iter().flatten() {
            if let Some(bn) = &mut extra.bn {
                bn.training = training;
            }
        }
    }

    pub fn forward(&mut self, p: &FeaturePyramid) -> Result<(FeaturePyramid, FeaturePyramid)> {
        let (cls, loc, _) = self.forward_with_cache(p)?;
        Ok((cls, loc))
    }

    /// Forward pass that records every intermediate pyramid for
    /// [`Head::backward`].
    pub fn forward_with_cache(
        &mut self,
        p: &FeaturePyramid,
    ) -> Result<(FeaturePyramid, FeaturePyramid, HeadCache)> {
        if p.channels() != self.cfg.channels {
            return Err(Error::ShapeMismatch {
                axis: "channel",
                expected: self.cfg.channels,
                got: p.channels(),
            });
        }
        if p.len() != self.levels {
            return Err(Error::InsufficientLevels {
                need: self.levels,
                got: p.len(),
            });
        }

        let branch = match &mut self.branches {
            Branches::Combined(stacks) => BranchTraces::Combined(run_stacks(stacks, p)?),
            Branches::Split { cls, loc } => BranchTraces::Split {
                cls: run_stacks(cls, p)?,
                loc: run_stacks(loc, p)?,
            },
        };
        let (cls_tip, loc_tip) = match &branch {
            BranchTraces::Combined(t) => (t.output.clone(), t.output.clone()),
            BranchTraces::Split { cls, loc } => (cls.output.clone(), loc.output.clone()),
        };

        let (cls_head_in, extra_cls_trace) = match &mut self.extra_cls {
            Some(extra) => {
                let (out, trace) = run_extra(extra, &cls_tip)?;
                (out, Some(trace))
            }
            None => (cls_tip, None),
        };
        let (loc_head_in, extra_loc_trace) = match &mut self.extra_loc {
            Some(extra) => {
                let (out, trace) = run_extra(extra, &loc_tip)?;
                (out, Some(trace))
            }
            None => (loc_tip, None),
        };

        let cls_out = match &self.final_cls {
            Some(k) => apply_per_level(&cls_head_in, k)?,
            None => cls_head_in.clone(),
        };
        let loc_out = match &self.final_loc {
            Some(k) => apply_per_level(&loc_head_in, k)?,
            None => loc_head_in.clone(),
        };

        let cache = HeadCache {
            branch,
            extra_cls: extra_cls_trace,
            extra_loc: extra_loc_trace,
            final_in_cls: cls_head_in,
            final_in_loc: loc_head_in,
        };
        Ok((cls_out, loc_out, cache))
    }

    /// Reverse-mode pass over the whole head.
    pub fn backward(
        &self,
        cache: &HeadCache,
        grad_cls: &FeaturePyramid,
        grad_loc: &FeaturePyramid,
    ) -> Result<HeadGrads> {
        // Final convolutions (no BN/ReLU behind them).
        let (grad_cls_in, final_cls_grads) = match &self.final_cls {
            Some(k) => {
                let (g, kg) = per_level_vjp(&cache.final_in_cls, k, grad_cls)?;
                (g, Some(kg))
            }
            None => (grad_cls.clone(), None),
        };
        let (grad_loc_in, final_loc_grads) = match &self.final_loc {
            Some(k) => {
                let (g, kg) = per_level_vjp(&cache.final_in_loc, k, grad_loc)?;
                (g, Some(kg))
            }
            None => (grad_loc.clone(), None),
        };

        // Extra convolutions.
        let (grad_cls_tip, extra_cls_grads) = match (&self.extra_cls, &cache.extra_cls) {
            (Some(extra), Some(trace)) => {
                let (g, eg) = extra_backward(extra, trace, &grad_cls_in)?;
                (g, Some(eg))
            }
            _ => (grad_cls_in, None),
        };
        let (grad_loc_tip, extra_loc_grads) = match (&self.extra_loc, &cache.extra_loc) {
            (Some(extra), Some(trace)) => {
                let (g, eg) = extra_backward(extra, trace, &grad_loc_in)?;
                (g, Some(eg))
            }
            _ => (grad_loc_in, None),
        };

        // Stacks, in reverse.
        let (branches, grad_input) = match (&self.branches, &cache.branch) {
            (Branches::Combined(stacks), BranchTraces::Combined(trace)) => {
                let mut grad_tip = grad_cls_tip;
                grad_tip.axpy(1.0, &grad_loc_tip);
                let (grads, grad_in) = stacks_backward(stacks, trace, &grad_tip)?;
                (BranchesGrads::Combined(grads), grad_in)
            }
            (Branches::Split { cls, loc }, BranchTraces::Split { cls: tc, loc: tl }) => {
                let (cls_grads, mut grad_in) = stacks_backward(cls, tc, &grad_cls_tip)?;
                let (loc_grads, grad_in_loc) = stacks_backward(loc, tl, &grad_loc_tip)?;
                grad_in.axpy(1.0, &grad_in_loc);
                (
                    BranchesGrads::Split {
                        cls: cls_grads,
                        loc: loc_grads,
                    },
                    grad_in,
                )
            }
            _ => unreachable!("cache shape always matches the head that built it"),
        };

        Ok(HeadGrads {
            branches,
            extra_cls: extra_cls_grads,
            extra_loc: extra_loc_grads,
            final_cls: final_cls_grads,
            final_loc: final_loc_grads,
            grad_input,
        })
    }

    /// One SGD step: theta -= lr * grad for every parameter.
    pub fn apply_gradients(&mut self, grads: &HeadGrads, lr: f64) {
        match (&mut self.branches, &grads.branches) {
            (Branches::Combined(stacks), BranchesGrads::Combined(g)) => {
                apply_stacks(stacks, g, lr)
            }
            (Branches::Split { cls, loc }, BranchesGrads::Split { cls: gc, loc: gl }) => {
                apply_stacks(cls, gc, lr);
                apply_stacks(loc, gl, lr);
            }
            _ => unreachable!("gradient shape always matches the head that produced it"),
        }
        for (extra, grad) in [
            (&mut self.extra_cls, &grads.extra_cls),
            (&mut self.extra_loc, &grads.extra_loc),
        ] {
            if let (Some(e), Some(g)) = (extra, grad) {
                apply_level_conv(&mut e.conv, &g.conv, lr);
                if let (Some(bn), Some(bg)) = (&mut e.bn, &g.bn) {
                    apply_bn(bn, bg, lr);
                }
            }
        }
        if let (Some(k), Some(g)) = (&mut self.final_cls, &grads.final_cls) {
            apply_kernel(k, g, lr);
        }
        if let (Some(k), Some(g)) = (&mut self.final_loc, &grads.final_loc) {
            apply_kernel(k, g, lr);
        }
    }
}

/// Free-function form of the forward pass.
pub fn head_forward(
    head: &mut Head,
    p: &FeaturePyramid,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    head.forward(p)
}

// ---------------------------------------------------------------------------
// Traces and per-piece forward/backward helpers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StepTrace {
    input: FeaturePyramid,
    pre_bn: FeaturePyramid,
    pre_relu: FeaturePyramid,
}

#[derive(Debug, Clone)]
pub struct StacksTrace {
    steps: Vec<StepTrace>,
    output: FeaturePyramid,
}

#[derive(Debug, Clone)]
enum BranchTraces {
    Combined(StacksTrace),
    Split { cls: StacksTrace, loc: StacksTrace },
}

/// Intermediate pyramids recorded by [`Head::forward_with_cache`].
#[derive(Debug, Clone)]
pub struct HeadCache {
    branch: BranchTraces,
    extra_cls: Option<StepTrace>,
    extra_loc: Option<StepTrace>,
    final_in_cls: FeaturePyramid,
    final_in_loc: FeaturePyramid,
}

fn relu_pyramid(p: &FeaturePyramid) -> FeaturePyramid {
    p.map_levels(|t| t.relu())
}

fn relu_mask_grad(pre_relu: &FeaturePyramid, grad: &FeaturePyramid) -> FeaturePyramid {
    let levels = pre_relu
        .levels()
        .iter()
        .zip(grad.levels())
        .map(|(x, g)| {
            let mut out = g.clone();
            for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
                if *v <= 0.0 {
                    *o = 0.0;
                }
            }
            out
        })
        .collect();
    FeaturePyramid::from_levels_unchecked(levels)
}

fn layer_forward(layer: &StackLayer, p: &FeaturePyramid) -> Result<FeaturePyramid> {
    match layer {
        StackLayer::Pyramid(l) => pconv_forward(p, l),
        StackLayer::PyramidSepc(l) => sepc_forward(p, l),
        StackLayer::Level(l) => l.forward(p),
    }
}

fn run_stacks(stacks: &mut [Stack], p: &FeaturePyramid) -> Result<StacksTrace> {
    let mut steps = Vec::with_capacity(stacks.len());
    let mut cur = p.clone();
    for stack in stacks.iter_mut() {
        let pre_bn = layer_forward(&stack.layer, &cur)?;
        let pre_relu = match &mut stack.bn {
            Some(bn) => bn_forward(&pre_bn, bn)?,
            None => pre_bn.clone(),
        };
        let out = relu_pyramid(&pre_relu);
        steps.push(StepTrace {
            input: cur,
            pre_bn,
            pre_relu,
        });
        cur = out;
    }
    Ok(StacksTrace {
        steps,
        output: cur,
    })
}

fn run_extra(extra: &mut ExtraConv, p: &FeaturePyramid) -> Result<(FeaturePyramid, StepTrace)> {
    let pre_bn = extra.conv.forward(p)?;
    let pre_relu = match &mut extra.bn {
        Some(bn) => bn_forward(&pre_bn, bn)?,
        None => pre_bn.clone(),
    };
    let out = relu_pyramid(&pre_relu);
    Ok((
        out,
        StepTrace {
            input: p.clone(),
            pre_bn,
            pre_relu,
        },
    ))
}

fn apply_per_level(p: &FeaturePyramid, k: &Conv2dKernel) -> Result<FeaturePyramid> {
    let levels = p
        .levels()
        .iter()
        .map(|x| conv2d(x, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeaturePyramid::from_levels_unchecked(levels))
}

fn per_level_vjp(
    p: &FeaturePyramid,
    k: &Conv2dKernel,
    grad_out: &FeaturePyramid,
) -> Result<(FeaturePyramid, KernelGrad)> {
    let mut kg = KernelGrad::zeros_like(k);
    let mut levels = Vec::with_capacity(p.len());
    for (x, g) in p.levels().iter().zip(grad_out.levels()) {
        let t = conv2d_vjp(x, k, g)?;
        kg.accumulate(&KernelGrad {
            weights: t.grad_weights,
            bias: t.grad_bias,
        });
        levels.push(t.grad_input);
    }
    Ok((FeaturePyramid::from_levels_unchecked(levels), kg))
}

/// Gradients for one stack step.
#[derive(Debug, Clone)]
pub struct StackGrads {
    pub layer: StackLayerGrads,
    pub bn: Option<BnGrads>,
}

#[derive(Debug, Clone)]
pub enum StackLayerGrads {
    Pyramid(PConvLayerGrads),
    PyramidSepc(SepcLayerGrads),
    Level(LevelConvGrads),
}

#[derive(Debug, Clone)]
pub struct ExtraGrads {
    pub conv: LevelConvGrads,
    pub bn: Option<BnGrads>,
}

#[derive(Debug, Clone)]
pub enum BranchesGrads {
    Combined(Vec<StackGrads>),
    Split {
        cls: Vec<StackGrads>,
        loc: Vec<StackGrads>,
    },
}

/// Gradients for every head parameter plus the input pyramid.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub branches: BranchesGrads,
    pub extra_cls: Option<ExtraGrads>,
    pub extra_loc: Option<ExtraGrads>,
    pub final_cls: Option<KernelGrad>,
    pub final_loc: Option<KernelGrad>,
    pub grad_input: FeaturePyramid,
}

fn step_backward(
    layer: &StackLayer,
    bn: &Option<BNState>,
    trace: &StepTrace,
    grad_out: &FeaturePyramid,
) -> Result<(FeaturePyramid, StackLayerGrads, Option<BnGrads>)> {
    let grad_pre_relu = relu_mask_grad(&trace.pre_relu, grad_out);
    let (grad_pre_bn, bn_grads) = match bn {
        Some(state) => {
            let (g, bg) = bn_vjp(&trace.pre_bn, state, &grad_pre_relu)?;
            (g, Some(bg))
        }
        None => (grad_pre_relu, None),
    };
    let (grad_in, layer_grads) = match layer {
        StackLayer::Pyramid(l) => {
            let (g, lg) = pconv_vjp(&trace.input, l, &grad_pre_bn)?;
            (g, StackLayerGrads::Pyramid(lg))
        }
        StackLayer::PyramidSepc(l) => {
            let (g, lg) = sepc_vjp(&trace.input, l, &grad_pre_bn)?;
            (g, StackLayerGrads::PyramidSepc(lg))
        }
        StackLayer::Level(l) => {
            let (g, lg) = l.vjp(&trace.input, &grad_pre_bn)?;
            (g, StackLayerGrads::Level(lg))
        }
    };
    Ok((grad_in, layer_grads, bn_grads))
}

fn stacks_backward(
    stacks: &[Stack],
    trace: &StacksTrace,
    grad_out: &FeaturePyramid,
) -> Result<(Vec<StackGrads>, FeaturePyramid)> {
    let mut grad = grad_out.clone();
    let mut grads: Vec<Option<StackGrads>> = vec![None; stacks.len()];
    for (i, (stack, step)) in stacks.iter().zip(trace.steps.iter()).enumerate().rev() {
        let (g_in, layer_grads, bn_grads) = step_backward(&stack.layer, &stack.bn, step, &grad)?;
        grads[i] = Some(StackGrads {
            layer: layer_grads,
            bn: bn_grads,
        });
        grad = g_in;
    }
    Ok((grads.into_iter().map(Option::unwrap).collect(), grad))
}

fn extra_backward(
    extra: &ExtraConv,
    trace: &StepTrace,
    grad_out: &FeaturePyramid,
) -> Result<(FeaturePyramid, ExtraGrads)> {
    let grad_pre_relu = relu_mask_grad(&trace.pre_relu, grad_out);
    let (grad_pre_bn, bn_grads) = match &extra.bn {
        Some(state) => {
            let (g, bg) = bn_vjp(&trace.pre_bn, state, &grad_pre_relu)?;
            (g, Some(bg))
        }
        None => (grad_pre_relu, None),
    };
    let (grad_in, conv_grads) = extra.conv.vjp(&trace.input, &grad_pre_bn)?;
    Ok((
        grad_in,
        ExtraGrads {
            conv: conv_grads,
            bn: bn_grads,
        },
    ))
}

// ---------------------------------------------------------------------------
// SGD application
// ---------------------------------------------------------------------------

fn apply_kernel(k: &mut Conv2dKernel, g: &KernelGrad, lr: f64) {
    k.weights.axpy(-lr, &g.weights);
    if let (Some(b), Some(gb)) = (k.bias.as_mut(), g.bias.as_ref()) {
        for (x, y) in b.iter_mut().zip(gb.iter()) {
            *x -= lr * y;
        }
    }
}

fn apply_level_conv(c: &mut LevelConv, g: &LevelConvGrads, lr: f64) {
    apply_kernel(&mut c.kernel, &g.kernel, lr);
    if let (Some(p), Some(gp)) = (c.predictor.as_mut(), g.predictor.as_ref()) {
        apply_kernel(p, gp, lr);
    }
}

fn apply_bn(bn: &mut BNState, g: &BnGrads, lr: f64) {
    for (set, gset) in bn.gamma.iter_mut().zip(g.gamma.iter()) {
        for (x, y) in set.iter_mut().zip(gset.iter()) {
            *x -= lr * y;
        }
    }
    for (set, gset) in bn.beta.iter_mut().zip(g.beta.iter()) {
        for (x, y) in set.iter_mut().zip(gset.iter()) {
            *x -= lr * y;
        }
    }
}

fn apply_stacks(stacks: &mut [Stack], grads: &[StackGrads], lr: f64) {
    for (stack, grad) in stacks.iter_mut().zip(grads.iter()) {
        match (&mut stack.layer, &grad.layer) {
            (StackLayer::Pyramid(l), StackLayerGrads::Pyramid(g)) => {
                apply_kernel(&mut l.w_up, &g.w_up, lr);
                apply_kernel(&mut l.w_same, &g.w_same, lr);
                apply_kernel(&mut l.w_down, &g.w_down, lr);
            }
            (StackLayer::PyramidSepc(l), StackLayerGrads::PyramidSepc(g)) => {
                apply_kernel(&mut l.base.w_up, &g.base.w_up, lr);
                apply_kernel(&mut l.base.w_same, &g.base.w_same, lr);
                apply_kernel(&mut l.base.w_down, &g.base.w_down, lr);
                apply_kernel(&mut l.pred_up, &g.pred_up, lr);
                apply_kernel(&mut l.pred_same, &g.pred_same, lr);
                apply_kernel(&mut l.pred_down, &g.pred_down, lr);
            }
            (StackLayer::Level(l), StackLayerGrads::Level(g)) => apply_level_conv(l, g, lr),
            _ => unreachable!("gradient kind always matches the layer kind"),
        }
        if let (Some(bn), Some(bg)) = (&mut stack.bn, &grad.bn) {
            apply_bn(bn, bg, lr);
        }
    }
}

// ---------------------------------------------------------------------------
// The committed smoke-training task
// ---------------------------------------------------------------------------

/// Learning rate for [`smoke_train`], fixed after one calibration run on the
/// committed task.
pub const SMOKE_LR: f64 = 0.5;
/// Seed of the committed task's inputs, targets, and head initialization.
pub const SMOKE_SEED: u64 = 2024;

/// A fixed synthetic regression task: fit seeded target pyramids with the
/// head outputs under squared loss.
#[derive(Debug, Clone)]
pub struct SmokeTask {
    pub input: FeaturePyramid,
    pub target_cls: FeaturePyramid,
    pub target_loc: FeaturePyramid,
}

/// Build the committed task for a head configuration: a 3-level band-limited
/// input pyramid on a 16x16 base and non-negative noise targets.
pub fn smoke_task(cfg: &HeadConfig, seed: u64) -> Result<SmokeTask> {
    let c = cfg.channels;
    let dims = [(1, c, 16, 16), (1, c, 8, 8), (1, c, 4, 4)];
    let input = FeaturePyramid::new(
        dims.iter()
            .enumerate()
            .map(|(i, &d)| band_limited_noise(d, seed + i as u64, 1.0))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let target = |offset: u64| -> Result<FeaturePyramid> {
        FeaturePyramid::new(
            dims.iter()
                .enumerate()
                .map(|(i, &d)| uniform_noise(d, seed + offset + i as u64).map(|v| 0.5 * v.abs()))
                .collect(),
        )
    };
    Ok(SmokeTask {
        input,
        target_cls: target(100)?,
        target_loc: target(200)?,
    })
}

fn squared_loss_and_grad(
    out: &FeaturePyramid,
    target: &FeaturePyramid,
) -> (f64, FeaturePyramid) {
    let count: usize = out.levels().iter().map(|t| t.len()).sum();
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    let grads = out
        .levels()
        .iter()
        .zip(target.levels())
        .map(|(o, t)| {
            let mut g = o.clone();
            for (gv, tv) in g.data_mut().iter_mut().zip(t.data()) {
                let d = *gv - tv;
                loss += 0.5 * d * d * inv;
                *gv = d * inv;
            }
            g
        })
        .collect();
    (loss, FeaturePyramid::from_levels_unchecked(grads))
}

/// Run `steps` of full-batch gradient descent on the task. Returns the loss
/// trajectory, one entry per step evaluated before the update, plus the final
/// loss; losses[0] is the initial loss.
pub fn smoke_train(head: &mut Head, task: &SmokeTask, steps: usize, lr: f64) -> Result<Vec<f64>> {
    head.set_training(true);
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (cls, loc, cache) = head.forward_with_cache(&task.input)?;
        let (loss_cls, grad_cls) = squared_loss_and_grad(&cls, &task.target_cls);
        let (loss_loc, grad_loc) = squared_loss_and_grad(&loc, &task.target_loc);
        losses.push(loss_cls + loss_loc);
        let grads = head.backward(&cache, &grad_cls, &grad_loc)?;
        head.apply_gradients(&grads, lr);
    }
    let (cls, loc) = head.forward(&task.input)?;
    let (loss_cls, _) = squared_loss_and_grad(&cls, &task.target_cls);
    let (loss_loc, _) = squared_loss_and_grad(&loc, &task.target_loc);
    losses.push(loss_cls + loss_loc);
    Ok(losses)
}
