//! Scale-equalizing pyramid convolution: the dataflow of plain pyramid
//! convolution, with every term that reads a level above the pyramid bottom
//! applied as a deformable convolution whose offsets are predicted from that
//! term's input level. Terms reading the bottom level stay plain, so the
//! bottom anchors the shared kernels.

use super::deform::{deform_conv2d, deform_conv2d_vjp, OffsetField};
use crate::error::{Error, Result};
use crate::pconv::{FeaturePyramid, PConvLayer, PConvLayerGrads};
use crate::tensor::{
    conv2d, conv2d_vjp, upsample_bilinear_x2, upsample_bilinear_x2_vjp, Conv2dKernel, KernelGrad,
    Tensor,
};

/// A pyramid convolution whose shared kernels deform above the bottom level.
/// One zero-initialized offset predictor per branch (up/same/down), shared
/// across pyramid levels; each predictor mirrors its branch kernel's stride
/// and padding and outputs 2*k_h*k_w offset channels.
#[derive(Debug, Clone)]
pub struct SepcLayer {
    pub base: PConvLayer,
    pub pred_up: Conv2dKernel,
    pub pred_same: Conv2dKernel,
    pub pred_down: Conv2dKernel,
}

impl SepcLayer {
    /// Wrap a base layer with freshly zero-initialized offset predictors
    /// (zero weights and zero bias), so the layer starts out bitwise equal to
    /// plain pyramid convolution.
    pub fn new(base: PConvLayer) -> Self {
        let k = base.kernel_size();
        let c_in = base.c_in();
        let zero_pred = |stride: usize| {
            Conv2dKernel::new(
                Tensor::zeros((2 * k * k, c_in, k, k)),
                Some(vec![0.0; 2 * k * k]),
                stride,
                (k - 1) / 2,
            )
            .expect("zero predictor construction")
        };
        Self {
            pred_up: zero_pred(1),
            pred_same: zero_pred(1),
            pred_down: zero_pred(2),
            base,
        }
    }

    /// Construct with explicit predictors (tests perturb them); shapes must
    /// pair with the base kernels.
    pub fn with_predictors(
        base: PConvLayer,
        pred_up: Conv2dKernel,
        pred_same: Conv2dKernel,
        pred_down: Conv2dKernel,
    ) -> Result<Self> {
        let k = base.kernel_size();
        for (name, pred, stride) in [
            ("pred_up", &pred_up, 1),
            ("pred_same", &pred_same, 1),
            ("pred_down", &pred_down, 2),
        ] {
            if pred.c_out() != 2 * k * k || pred.c_in() != base.c_in() {
                return Err(Error::InvalidKernel(format!(
                    "{name} must map {} channels to {} offset channels",
                    base.c_in(),
                    2 * k * k
                )));
            }
            if pred.stride != stride || pred.padding != (pred.k_h() - 1) / 2 {
                return Err(Error::InvalidKernel(format!(
                    "{name} must use stride {stride} with same padding"
                )));
            }
        }
        Ok(Self {
            base,
            pred_up,
            pred_same,
            pred_down,
        })
    }
}

/// Gradients for a [`SepcLayer`].
#[derive(Debug, Clone)]
pub struct SepcLayerGrads {
    pub base: PConvLayerGrads,
    pub pred_up: KernelGrad,
    pub pred_same: KernelGrad,
    pub pred_down: KernelGrad,
}

impl SepcLayerGrads {
    pub fn zeros_like(layer: &SepcLayer) -> Self {
        Self {
            base: PConvLayerGrads::zeros_like(&layer.base),
            pred_up: KernelGrad::zeros_like(&layer.pred_up),
            pred_same: KernelGrad::zeros_like(&layer.pred_same),
            pred_down: KernelGrad::zeros_like(&layer.pred_down),
        }
    }
}

/// One term of the pyramid sum: plain convolution when the source is the
/// bottom level, deformable otherwise.
fn term_forward(
    src: &Tensor,
    src_is_bottom: bool,
    kernel: &Conv2dKernel,
    predictor: &Conv2dKernel,
) -> Result<Tensor> {
    if src_is_bottom {
        conv2d(src, kernel)
    } else {
        let off = OffsetField(conv2d(src, predictor)?);
        deform_conv2d(src, kernel, &off)
    }
}

/// Backward through one term; returns grad wrt src and accumulates kernel and
/// predictor grads.
fn term_vjp(
    src: &Tensor,
    src_is_bottom: bool,
    kernel: &Conv2dKernel,
    predictor: &Conv2dKernel,
    grad_term: &Tensor,
    kernel_grad: &mut KernelGrad,
    predictor_grad: &mut KernelGrad,
) -> Result<Tensor> {
    if src_is_bottom {
        let t = conv2d_vjp(src, kernel, grad_term)?;
        kernel_grad.accumulate(&KernelGrad {
            weights: t.grad_weights,
            bias: t.grad_bias,
        });
        Ok(t.grad_input)
    } else {
        let off = OffsetField(conv2d(src, predictor)?);
        let d = deform_conv2d_vjp(src, kernel, &off, grad_term)?;
        kernel_grad.accumulate(&d.grad_kernel);
        let p = conv2d_vjp(src, predictor, &d.grad_offsets.0)?;
        predictor_grad.accumulate(&KernelGrad {
            weights: p.grad_weights,
            bias: p.grad_bias,
        });
        let mut grad_src = d.grad_input;
        grad_src.axpy(1.0, &p.grad_input);
        Ok(grad_src)
    }
}

/// Forward SEPC. Identical dataflow to [`crate::pconv::pconv_forward`]; with
/// zero-initialized offset predictors the output is bitwise equal to it.
pub fn sepc_forward(p: &FeaturePyramid, layer: &SepcLayer) -> Result<FeaturePyramid> {
    if p.channels() != layer.base.c_in() {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: layer.base.c_in(),
            got: p.channels(),
        });
    }
    let count = p.len();
    let mut out = Vec::with_capacity(count);
    for l in 0..count {
        let (_, _, h, w) = p.level(l).dims();
        let mut acc = term_forward(p.level(l), l == 0, &layer.base.w_same, &layer.pred_same)?;
        if l > 0 {
            let down = term_forward(
                p.level(l - 1),
                l - 1 == 0,
                &layer.base.w_down,
                &layer.pred_down,
            )?;
            acc.axpy(1.0, &down.fit_spatial(h, w));
        }
        if l + 1 < count {
            // The up term's source is always above the bottom.
            let up = term_forward(p.level(l + 1), false, &layer.base.w_up, &layer.pred_up)?;
            acc.axpy(1.0, &upsample_bilinear_x2(&up).fit_spatial(h, w));
        }
        out.push(acc);
    }
    Ok(FeaturePyramid::from_levels_unchecked(out))
}

/// Reverse-mode derivative of [`sepc_forward`]: gradients for the input
/// pyramid, the three shared kernels, and the three offset predictors.
pub fn sepc_vjp(
    p: &FeaturePyramid,
    layer: &SepcLayer,
    grad_out: &FeaturePyramid,
) -> Result<(FeaturePyramid, SepcLayerGrads)> {
    if grad_out.len() != p.len() {
        return Err(Error::InsufficientLevels {
            need: p.len(),
            got: grad_out.len(),
        });
    }
    let count = p.len();
    let mut grad_p = p.zeros_like();
    let mut grads = SepcLayerGrads::zeros_like(layer);

    for l in 0..count {
        let g = grad_out.level(l);

        let gs = term_vjp(
            p.level(l),
            l == 0,
            &layer.base.w_same,
            &layer.pred_same,
            g,
            &mut grads.base.w_same,
            &mut grads.pred_same,
        )?;
        grad_p.levels_mut()[l].axpy(1.0, &gs);

        if l > 0 {
            let (oh, ow) = layer
                .base
                .w_down
                .out_size(p.level(l - 1).dims().2, p.level(l - 1).dims().3)?;
            let g_fit = Tensor::fit_spatial_vjp(g, oh, ow);
            let gd = term_vjp(
                p.level(l - 1),
                l - 1 == 0,
                &layer.base.w_down,
                &layer.pred_down,
                &g_fit,
                &mut grads.base.w_down,
                &mut grads.pred_down,
            )?;
            grad_p.levels_mut()[l - 1].axpy(1.0, &gd);
        }

        if l + 1 < count {
            let (n, _, ih, iw) = p.level(l + 1).dims();
            let g_fit = Tensor::fit_spatial_vjp(g, 2 * ih, 2 * iw);
            let g_conv =
                upsample_bilinear_x2_vjp(&g_fit, (n, layer.base.c_out(), ih, iw));
            let gu = term_vjp(
                p.level(l + 1),
                false,
                &layer.base.w_up,
                &layer.pred_up,
                &g_conv,
                &mut grads.base.w_up,
                &mut grads.pred_up,
            )?;
            grad_p.levels_mut()[l + 1].axpy(1.0, &gu);
        }
    }
    Ok((grad_p, grads))
}

/// One shared per-level convolution (a pyramid convolution of scale extent 1).
/// With an offset predictor attached it deforms above the bottom level, the
/// SEPC treatment of the head's extra convolution.
#[derive(Debug, Clone)]
pub struct LevelConv {
    pub kernel: Conv2dKernel,
    pub predictor: Option<Conv2dKernel>,
}

/// Gradients for a [`LevelConv`].
#[derive(Debug, Clone)]
pub struct LevelConvGrads {
    pub kernel: KernelGrad,
    pub predictor: Option<KernelGrad>,
}

impl LevelConv {
    pub fn plain(kernel: Conv2dKernel) -> Self {
        Self {
            kernel,
            predictor: None,
        }
    }

    /// Attach a zero-initialized offset predictor (SEPC mode).
    pub fn with_zero_predictor(kernel: Conv2dKernel) -> Self {
        let k = kernel.k_h();
        let predictor = Conv2dKernel::new(
            Tensor::zeros((2 * k * k, kernel.c_in(), k, k)),
            Some(vec![0.0; 2 * k * k]),
            1,
            (k - 1) / 2,
        )
        .expect("zero predictor construction");
        Self {
            kernel,
            predictor: Some(predictor),
        }
    }

    pub fn forward(&self, p: &FeaturePyramid) -> Result<FeaturePyramid> {
        let levels = p
            .levels()
            .iter()
            .enumerate()
            .map(|(l, x)| match (&self.predictor, l) {
                (Some(pred), l) if l > 0 => {
                    let off = OffsetField(conv2d(x, pred)?);
                    deform_conv2d(x, &self.kernel, &off)
                }
                _ => conv2d(x, &self.kernel),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeaturePyramid::from_levels_unchecked(levels))
    }

    pub fn vjp(
        &self,
        p: &FeaturePyramid,
        grad_out: &FeaturePyramid,
    ) -> Result<(FeaturePyramid, LevelConvGrads)> {
        let mut grads = LevelConvGrads {
            kernel: KernelGrad::zeros_like(&self.kernel),
            predictor: self.predictor.as_ref().map(KernelGrad::zeros_like),
        };
        let mut grad_levels = Vec::with_capacity(p.len());
        for (l, (x, g)) in p.levels().iter().zip(grad_out.levels()).enumerate() {
            match (&self.predictor, l) {
                (Some(pred), l) if l > 0 => {
                    let gx = term_vjp(
                        x,
                        false,
                        &self.kernel,
                        pred,
                        g,
                        &mut grads.kernel,
                        grads.predictor.as_mut().unwrap(),
                    )?;
                    grad_levels.push(gx);
                }
                _ => {
                    let t = conv2d_vjp(x, &self.kernel, g)?;
                    grads.kernel.accumulate(&KernelGrad {
                        weights: t.grad_weights,
                        bias: t.grad_bias,
                    });
                    grad_levels.push(t.grad_input);
                }
            }
        }
        Ok((
            FeaturePyramid::from_levels_unchecked(grad_levels),
            grads,
        ))
    }
}
