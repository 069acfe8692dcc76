//! Pyramid convolution: a 3-D convolution over (scale, height, width)
//! realized as three shared 2-D kernels striding through the pyramid.
//!
//! Per level l the output is
//!   y[l] = Upsample(w_up * x[l+1]) + w_same * x[l] + w_down *_s2 x[l-1],
//! with the upper term dropped at the top level and the lower term dropped at
//! the bottom. All three convolutions use "same" padding; the stride-2 term
//! lands on exactly ceil-half dims and the upsampled term is cropped
//! (top-left anchored) or zero-padded by at most one row/column to match the
//! work-on level when its dims are odd.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::pyramid::FeaturePyramid;
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv2d_vjp, upsample_bilinear_x2, upsample_bilinear_x2_vjp, Conv2dKernel, KernelGrad,
    Tensor,
};

/// The three kernels of a pyramid convolution. All share (c_in, c_out,
/// k_h, k_w); strides are fixed (up/same: 1, down: 2) with same padding.
#[derive(Debug, Clone)]
pub struct PConvLayer {
    pub w_up: Conv2dKernel,
    pub w_same: Conv2dKernel,
    pub w_down: Conv2dKernel,
}

impl PConvLayer {
    pub fn new(w_up: Conv2dKernel, w_same: Conv2dKernel, w_down: Conv2dKernel) -> Result<Self> {
        let dims = w_same.weights.dims();
        for (name, k, stride) in [("w_up", &w_up, 1), ("w_same", &w_same, 1), ("w_down", &w_down, 2)]
        {
            if k.weights.dims() != dims {
                return Err(Error::InvalidKernel(format!(
                    "{name} weights {:?} differ from w_same {:?}",
                    k.weights.dims(),
                    dims
                )));
            }
            if k.stride != stride {
                return Err(Error::InvalidKernel(format!(
                    "{name} must have stride {stride}, got {}",
                    k.stride
                )));
            }
            if k.padding != (k.k_h() - 1) / 2 || k.k_h() != k.k_w() {
                return Err(Error::InvalidKernel(format!(
                    "{name} must use square kernels with same padding (k-1)/2"
                )));
            }
        }
        Ok(Self {
            w_up,
            w_same,
            w_down,
        })
    }

    pub fn c_in(&self) -> usize {
        self.w_same.c_in()
    }

    pub fn c_out(&self) -> usize {
        self.w_same.c_out()
    }

    pub fn kernel_size(&self) -> usize {
        self.w_same.k_h()
    }

    /// Kaiming-initialized layer (fan-in scaling) from a seeded generator.
    pub fn kaiming(c_in: usize, c_out: usize, k: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            w_up: kaiming_kernel(c_out, c_in, k, 1, bias, rng),
            w_same: kaiming_kernel(c_out, c_in, k, 1, bias, rng),
            w_down: kaiming_kernel(c_out, c_in, k, 2, bias, rng),
        }
    }
}

/// Kaiming-normal kernel: std = sqrt(2 / fan_in), same padding.
pub fn kaiming_kernel(
    c_out: usize,
    c_in: usize,
    k: usize,
    stride: usize,
    bias: bool,
    rng: &mut impl Rng,
) -> Conv2dKernel {
    let fan_in = (c_in * k * k) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
    let data = (0..c_out * c_in * k * k)
        .map(|_| normal.sample(rng))
        .collect();
    let weights = Tensor::from_vec_unchecked((c_out, c_in, k, k), data);
    Conv2dKernel::new(weights, bias.then(|| vec![0.0; c_out]), stride, (k - 1) / 2)
        .expect("kaiming kernel construction")
}

/// Gradients for a [`PConvLayer`].
#[derive(Debug, Clone)]
pub struct PConvLayerGrads {
    pub w_up: KernelGrad,
    pub w_same: KernelGrad,
    pub w_down: KernelGrad,
}

impl PConvLayerGrads {
    pub fn zeros_like(layer: &PConvLayer) -> Self {
        Self {
            w_up: KernelGrad::zeros_like(&layer.w_up),
            w_same: KernelGrad::zeros_like(&layer.w_same),
            w_down: KernelGrad::zeros_like(&layer.w_down),
        }
    }
}

fn check_channels(p: &FeaturePyramid, c_in: usize) -> Result<()> {
    if p.channels() != c_in {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: c_in,
            got: p.channels(),
        });
    }
    Ok(())
}

/// Forward pyramid convolution. Output level l keeps input level l's dims;
/// the nonlinearity is the head's job, not this function's.
pub fn pconv_forward(p: &FeaturePyramid, layer: &PConvLayer) -> Result<FeaturePyramid> {
    check_channels(p, layer.c_in())?;
    let count = p.len();
    let mut out = Vec::with_capacity(count);
    for l in 0..count {
        let (_, _, h, w) = p.level(l).dims();
        let mut acc = conv2d(p.level(l), &layer.w_same)?;
        if l > 0 {
            let down = conv2d(p.level(l - 1), &layer.w_down)?;
            acc.axpy(1.0, &down.fit_spatial(h, w));
        }
        if l + 1 < count {
            let up = upsample_bilinear_x2(&conv2d(p.level(l + 1), &layer.w_up)?);
            acc.axpy(1.0, &up.fit_spatial(h, w));
        }
        out.push(acc);
    }
    Ok(FeaturePyramid::from_levels_unchecked(out))
}

/// Reverse-mode derivative of [`pconv_forward`]. Each input level collects
/// contributions from up to three output levels.
pub fn pconv_vjp(
    p: &FeaturePyramid,
    layer: &PConvLayer,
    grad_out: &FeaturePyramid,
) -> Result<(FeaturePyramid, PConvLayerGrads)> {
    check_channels(p, layer.c_in())?;
    if grad_out.len() != p.len() {
        return Err(Error::InsufficientLevels {
            need: p.len(),
            got: grad_out.len(),
        });
    }
    let count = p.len();
    let mut grad_p = p.zeros_like();
    let mut grads = PConvLayerGrads::zeros_like(layer);

    for l in 0..count {
        let g = grad_out.level(l);
        let (n, c_out, h, w) = g.dims();
        let expect = {
            let (_, _, ih, iw) = p.level(l).dims();
            (n, layer.c_out(), ih, iw)
        };
        if g.dims() != (expect.0, c_out, expect.2, expect.3) || c_out != layer.c_out() {
            return Err(Error::ShapeMismatch {
                axis: "grad_out",
                expected: expect.1 * expect.2 * expect.3,
                got: c_out * h * w,
            });
        }

        // Same-level term.
        let t = conv2d_vjp(p.level(l), &layer.w_same, g)?;
        grad_p.levels_mut()[l].axpy(1.0, &t.grad_input);
        grads.w_same.accumulate(&KernelGrad {
            weights: t.grad_weights,
            bias: t.grad_bias,
        });

        // Down term read level l-1 through a stride-2 conv and a spatial fit.
        if l > 0 {
            let (oh, ow) = layer.w_down.out_size(
                p.level(l - 1).dims().2,
                p.level(l - 1).dims().3,
            )?;
            let g_fit = Tensor::fit_spatial_vjp(g, oh, ow);
            let t = conv2d_vjp(p.level(l - 1), &layer.w_down, &g_fit)?;
            grad_p.levels_mut()[l - 1].axpy(1.0, &t.grad_input);
            grads.w_down.accumulate(&KernelGrad {
                weights: t.grad_weights,
                bias: t.grad_bias,
            });
        }

        // Up term read level l+1 through a conv, x2 upsample, and a fit.
        if l + 1 < count {
            let (_, _, ih, iw) = p.level(l + 1).dims();
            let conv_dims = (n, layer.c_out(), ih, iw);
            let g_fit = Tensor::fit_spatial_vjp(g, 2 * ih, 2 * iw);
            let g_conv = upsample_bilinear_x2_vjp(&g_fit, conv_dims);
            let t = conv2d_vjp(p.level(l + 1), &layer.w_up, &g_conv)?;
            grad_p.levels_mut()[l + 1].axpy(1.0, &t.grad_input);
            grads.w_up.accumulate(&KernelGrad {
                weights: t.grad_weights,
                bias: t.grad_bias,
            });
        }
    }
    Ok((grad_p, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::uniform_noise;
    use crate::tensor::finite_diff_grad;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(c: usize, k: usize) -> PConvLayer {
        let mut same = Tensor::zeros((c, c, k, k));
        for ch in 0..c {
            same.set(ch, ch, k / 2, k / 2, 1.0);
        }
        PConvLayer::new(
            Conv2dKernel::new(Tensor::zeros((c, c, k, k)), None, 1, (k - 1) / 2).unwrap(),
            Conv2dKernel::new(same, None, 1, (k - 1) / 2).unwrap(),
            Conv2dKernel::new(Tensor::zeros((c, c, k, k)), None, 2, (k - 1) / 2).unwrap(),
        )
        .unwrap()
    }

    fn ones_layer(c: usize) -> PConvLayer {
        PConvLayer::new(
            Conv2dKernel::new(Tensor::filled((c, c, 3, 3), 1.0), None, 1, 1).unwrap(),
            Conv2dKernel::new(Tensor::filled((c, c, 3, 3), 1.0), None, 1, 1).unwrap(),
            Conv2dKernel::new(Tensor::filled((c, c, 3, 3), 1.0), None, 2, 1).unwrap(),
        )
        .unwrap()
    }

    fn random_layer(c_in: usize, c_out: usize, seed: u64) -> PConvLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PConvLayer::kaiming(c_in, c_out, 3, false, &mut rng)
    }

    fn random_pyramid(dims: &[(usize, usize, usize, usize)], seed: u64) -> FeaturePyramid {
        let levels = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| uniform_noise(d, seed + i as u64))
            .collect();
        FeaturePyramid::new(levels).unwrap()
    }

    /// Straight-line reference: materializes each term separately with its
    /// own inline loops (no shared code with the production path beyond the
    /// primitive ops it reimplements).
    fn pconv_reference(p: &FeaturePyramid, layer: &PConvLayer) -> Vec<Tensor> {
        let naive_conv = |x: &Tensor, k: &Conv2dKernel| -> Tensor {
            let (n, c_in, h, w) = x.dims();
            let (c_out, _, k_h, k_w) = k.weights.dims();
            let oh = (h + 2 * k.padding - k_h) / k.stride + 1;
            let ow = (w + 2 * k.padding - k_w) / k.stride + 1;
            let mut out = Tensor::zeros((n, c_out, oh, ow));
            for b in 0..n {
                for oc in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ic in 0..c_in {
                                for u in 0..k_h {
                                    for v in 0..k_w {
                                        let iy =
                                            (oy * k.stride + u) as i64 - k.padding as i64;
                                        let ix =
                                            (ox * k.stride + v) as i64 - k.padding as i64;
                                        if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                            acc += k.weights.at(oc, ic, u, v)
                                                * x.at(b, ic, iy as usize, ix as usize);
                                        }
                                    }
                                }
                            }
                            out.set(b, oc, oy, ox, acc);
                        }
                    }
                }
            }
            out
        };
        let naive_up = |x: &Tensor| -> Tensor {
            let (n, c, h, w) = x.dims();
            let mut out = Tensor::zeros((n, c, 2 * h, 2 * w));
            for b in 0..n {
                for ch in 0..c {
                    for oy in 0..2 * h {
                        for ox in 0..2 * w {
                            let sy = ((oy as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (h - 1) as f64);
                            let sx = ((ox as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f64);
                            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                            let v = (1.0 - fy) * (1.0 - fx) * x.at(b, ch, y0, x0)
                                + (1.0 - fy) * fx * x.at(b, ch, y0, x1)
                                + fy * (1.0 - fx) * x.at(b, ch, y1, x0)
                                + fy * fx * x.at(b, ch, y1, x1);
                            out.set(b, ch, oy, ox, v);
                        }
                    }
                }
            }
            out
        };

        let count = p.len();
        (0..count)
            .map(|l| {
                let (_, _, h, w) = p.level(l).dims();
                let mut acc = naive_conv(p.level(l), &layer.w_same);
                if l > 0 {
                    acc.axpy(1.0, &naive_conv(p.level(l - 1), &layer.w_down).fit_spatial(h, w));
                }
                if l + 1 < count {
                    acc.axpy(1.0, &naive_up(&naive_conv(p.level(l + 1), &layer.w_up)).fit_spatial(h, w));
                }
                acc
            })
            .collect()
    }

    #[test]
    fn single_level_reduces_to_same_conv() {
        let p = random_pyramid(&[(1, 2, 6, 6)], 3);
        let layer = random_layer(2, 3, 4);
        let out = pconv_forward(&p, &layer).unwrap();
        let direct = conv2d(p.level(0), &layer.w_same).unwrap();
        assert_eq!(out.level(0).data(), direct.data());
    }

    #[test]
    fn single_level_identity_kernel_is_identity() {
        let p = random_pyramid(&[(1, 2, 5, 5)], 5);
        let out = pconv_forward(&p, &identity_layer(2, 3)).unwrap();
        assert_eq!(out.level(0).data(), p.level(0).data());
    }

    #[test]
    fn constant_pyramid_sums_kernel_masses_at_interior() {
        let v = 0.5;
        let levels = vec![
            Tensor::filled((1, 1, 16, 16), v),
            Tensor::filled((1, 1, 8, 8), v),
            Tensor::filled((1, 1, 4, 4), v),
        ];
        let p = FeaturePyramid::new(levels).unwrap();
        let out = pconv_forward(&p, &ones_layer(1)).unwrap();
        // Middle level, every interior pixel: all three 3x3 all-ones kernels
        // contribute 9v each. The upsampled term's border halo reaches 3
        // pixels in; stay clear of it.
        for y in 3..5 {
            for x in 3..5 {
                assert!(
                    (out.level(1).at(0, 0, y, x) - 27.0 * v).abs() < 1e-12,
                    "({y},{x}) = {}",
                    out.level(1).at(0, 0, y, x)
                );
            }
        }
        // Bottom level interior: same + upsampled terms only.
        assert!((out.level(0).at(0, 0, 8, 8) - 18.0 * v).abs() < 1e-12);
        // Top level interior: same + strided terms only.
        assert!((out.level(2).at(0, 0, 2, 2) - 18.0 * v).abs() < 1e-12);
    }

    #[test]
    fn matches_straight_line_reference_on_five_levels() {
        let p = random_pyramid(
            &[
                (2, 3, 17, 16),
                (2, 3, 9, 8),
                (2, 3, 5, 4),
                (2, 3, 3, 2),
                (2, 3, 2, 1),
            ],
            11,
        );
        let layer = random_layer(3, 2, 12);
        let out = pconv_forward(&p, &layer).unwrap();
        let reference = pconv_reference(&p, &layer);
        for (got, expect) in out.levels().iter().zip(reference.iter()) {
            assert_eq!(got.dims(), expect.dims());
            assert!(got.max_abs_diff(expect) < 1e-12);
        }
    }

    #[test]
    fn preserves_level_dims_and_count() {
        let p = random_pyramid(&[(1, 2, 13, 11), (1, 2, 7, 6), (1, 2, 4, 3)], 21);
        let out = pconv_forward(&p, &random_layer(2, 5, 22)).unwrap();
        assert_eq!(out.len(), p.len());
        for (o, i) in out.levels().iter().zip(p.levels()) {
            let (_, _, oh, ow) = o.dims();
            let (_, _, ih, iw) = i.dims();
            assert_eq!((oh, ow), (ih, iw));
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = random_pyramid(&[(1, 2, 8, 8), (1, 2, 4, 4)], 30);
        assert!(matches!(
            pconv_forward(&p, &random_layer(3, 3, 31)),
            Err(Error::ShapeMismatch { axis: "channel", .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        // Superposition: pconv(a*p + b*q) == a*pconv(p) + b*pconv(q).
        #[test]
        fn is_linear_in_the_pyramid(seed in 0u64..200, alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
            let dims = [(1, 2, 8, 8), (1, 2, 4, 4), (1, 2, 2, 2)];
            let p = random_pyramid(&dims, seed);
            let q = random_pyramid(&dims, seed + 1000);
            let layer = random_layer(2, 2, seed + 2000);

            let mut mixed_levels = Vec::new();
            for (a, b) in p.levels().iter().zip(q.levels()) {
                let mut m = a.scale(alpha);
                m.axpy(beta, b);
                mixed_levels.push(m);
            }
            let mixed = FeaturePyramid::new(mixed_levels).unwrap();

            let lhs = pconv_forward(&mixed, &layer).unwrap();
            let mut rhs = pconv_forward(&p, &layer).unwrap().map_levels(|t| t.scale(alpha));
            rhs.axpy(beta, &pconv_forward(&q, &layer).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn vjp_zero_grad_gives_zero() {
        let p = random_pyramid(&[(1, 2, 8, 8), (1, 2, 4, 4)], 40);
        let layer = random_layer(2, 3, 41);
        let (gp, gl) = pconv_vjp(&p, &layer, &pconv_forward(&p, &layer).unwrap().zeros_like())
            .unwrap();
        for level in gp.levels() {
            assert_eq!(level.max_abs(), 0.0);
        }
        assert_eq!(gl.w_same.weights.max_abs(), 0.0);
        assert_eq!(gl.w_up.weights.max_abs(), 0.0);
        assert_eq!(gl.w_down.weights.max_abs(), 0.0);
    }

    #[test]
    fn vjp_single_level_reduces_to_conv_vjp() {
        let p = random_pyramid(&[(1, 2, 6, 6)], 50);
        let layer = random_layer(2, 2, 51);
        let g = random_pyramid(&[(1, 2, 6, 6)], 52);
        let (gp, gl) = pconv_vjp(&p, &layer, &g).unwrap();
        let direct = conv2d_vjp(p.level(0), &layer.w_same, g.level(0)).unwrap();
        assert_eq!(gp.level(0).data(), direct.grad_input.data());
        assert_eq!(gl.w_same.weights.data(), direct.grad_weights.data());
        assert_eq!(gl.w_up.weights.max_abs(), 0.0);
        assert_eq!(gl.w_down.weights.max_abs(), 0.0);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let dims = [(1, 2, 9, 8), (1, 2, 5, 4), (1, 2, 3, 2)];
        let p = random_pyramid(&dims, 60);
        let layer = random_layer(2, 2, 61);
        let g = random_pyramid(&dims, 62);
        let (gp, gl) = pconv_vjp(&p, &layer, &g).unwrap();

        let loss = |pyr: &FeaturePyramid| -> f64 {
            let out = pconv_forward(pyr, &layer).unwrap();
            out.levels()
                .iter()
                .zip(g.levels())
                .map(|(o, gg)| o.data().iter().zip(gg.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };

        // Input gradients, level by level.
        for l in 0..dims.len() {
            let fd = finite_diff_grad(
                &|t: &Tensor| {
                    let mut levels: Vec<Tensor> = p.levels().to_vec();
                    levels[l] = t.clone();
                    Ok(loss(&FeaturePyramid::new(levels).unwrap()))
                },
                p.level(l),
                1e-5,
            )
            .unwrap();
            let max_rel = fd
                .data()
                .iter()
                .zip(gp.level(l).data())
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
                .fold(0.0, f64::max);
            assert!(max_rel < 1e-5, "level {l} grad_input rel err {max_rel}");
        }

        // Weight gradients for each of the three kernels.
        for (name, kernel, grad) in [
            ("w_up", &layer.w_up, &gl.w_up),
            ("w_same", &layer.w_same, &gl.w_same),
            ("w_down", &layer.w_down, &gl.w_down),
        ] {
            let fd = finite_diff_grad(
                &|wt: &Tensor| {
                    let mut trial = layer.clone();
                    match name {
                        "w_up" => trial.w_up.weights = wt.clone(),
                        "w_same" => trial.w_same.weights = wt.clone(),
                        _ => trial.w_down.weights = wt.clone(),
                    }
                    let out = pconv_forward(&p, &trial).unwrap();
                    Ok(out
                        .levels()
                        .iter()
                        .zip(g.levels())
                        .map(|(o, gg)| {
                            o.data().iter().zip(gg.data()).map(|(a, b)| a * b).sum::<f64>()
                        })
                        .sum())
                },
                &kernel.weights,
                1e-5,
            )
            .unwrap();
            let max_rel = fd
                .data()
                .iter()
                .zip(grad.weights.data())
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
                .fold(0.0, f64::max);
            assert!(max_rel < 1e-5, "{name} rel err {max_rel}");
        }
    }
}
