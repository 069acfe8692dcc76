//! Deformable 2-D convolution: every kernel tap samples the input at a
//! real-valued position shifted by a per-location offset field, via bilinear
//! interpolation with a zero outside-the-map convention.

use crate::error::{Error, Result};
use crate::tensor::{Conv2dKernel, KernelGrad, Tensor};

/// Per-location sampling offsets for a deformable convolution, shaped
/// (n, 2*k_h*k_w, H_out, W_out). For kernel tap i (row-major over the kernel
/// grid), channel 2i holds the y-offset and channel 2i+1 the x-offset, in
/// pixels of the input feature map.
#[derive(Debug, Clone)]
pub struct OffsetField(pub Tensor);

impl OffsetField {
    pub fn zeros(n: usize, k_h: usize, k_w: usize, h_out: usize, w_out: usize) -> Self {
        Self(Tensor::zeros((n, 2 * k_h * k_w, h_out, w_out)))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Bilinear read of x[b, c] at real coordinates (y, x). Samples with both
/// neighbors outside [0,H)x[0,W) contribute 0; partial overlap uses zero for
/// the outside corners. Exact-integer coordinates return the grid value
/// itself, bit for bit.
pub fn bilinear_sample(x: &Tensor, b: usize, c: usize, y: f64, xx: f64) -> f64 {
    let (_, _, h, w) = x.dims();
    if y <= -1.0 || y >= h as f64 || xx <= -1.0 || xx >= w as f64 {
        return 0.0;
    }
    let y0 = y.floor();
    let x0 = xx.floor();
    let fy = y - y0;
    let fx = xx - x0;
    let fetch = |yy: f64, xxx: f64| -> f64 {
        if yy >= 0.0 && yy < h as f64 && xxx >= 0.0 && xxx < w as f64 {
            x.at(b, c, yy as usize, xxx as usize)
        } else {
            0.0
        }
    };
    if fy == 0.0 && fx == 0.0 {
        return fetch(y0, x0);
    }
    (1.0 - fy) * (1.0 - fx) * fetch(y0, x0)
        + (1.0 - fy) * fx * fetch(y0, x0 + 1.0)
        + fy * (1.0 - fx) * fetch(y0 + 1.0, x0)
        + fy * fx * fetch(y0 + 1.0, x0 + 1.0)
}

/// Value plus partial derivatives with respect to the sample coordinates.
pub fn bilinear_sample_with_coord_grad(
    x: &Tensor,
    b: usize,
    c: usize,
    y: f64,
    xx: f64,
) -> (f64, f64, f64) {
    let (_, _, h, w) = x.dims();
    if y <= -1.0 || y >= h as f64 || xx <= -1.0 || xx >= w as f64 {
        return (0.0, 0.0, 0.0);
    }
    let y0 = y.floor();
    let x0 = xx.floor();
    let fy = y - y0;
    let fx = xx - x0;
    let fetch = |yy: f64, xxx: f64| -> f64 {
        if yy >= 0.0 && yy < h as f64 && xxx >= 0.0 && xxx < w as f64 {
            x.at(b, c, yy as usize, xxx as usize)
        } else {
            0.0
        }
    };
    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1.0);
    let v10 = fetch(y0 + 1.0, x0);
    let v11 = fetch(y0 + 1.0, x0 + 1.0);
    let value = (1.0 - fy) * (1.0 - fx) * v00
        + (1.0 - fy) * fx * v01
        + fy * (1.0 - fx) * v10
        + fy * fx * v11;
    let d_dy = -(1.0 - fx) * v00 - fx * v01 + (1.0 - fx) * v10 + fx * v11;
    let d_dx = -(1.0 - fy) * v00 + (1.0 - fy) * v01 - fy * v10 + fy * v11;
    (value, d_dy, d_dx)
}

/// Scatter `g` to the four corners around (y, x) in `grad`, the adjoint of
/// [`bilinear_sample`] with respect to the image.
pub fn bilinear_sample_scatter(grad: &mut Tensor, b: usize, c: usize, y: f64, xx: f64, g: f64) {
    let (_, _, h, w) = grad.dims();
    if y <= -1.0 || y >= h as f64 || xx <= -1.0 || xx >= w as f64 {
        return;
    }
    let y0 = y.floor();
    let x0 = xx.floor();
    let fy = y - y0;
    let fx = xx - x0;
    let mut add = |yy: f64, xxx: f64, weight: f64| {
        if yy >= 0.0 && yy < h as f64 && xxx >= 0.0 && xxx < w as f64 {
            let idx = grad.idx(b, c, yy as usize, xxx as usize);
            grad.data_mut()[idx] += weight * g;
        }
    };
    add(y0, x0, (1.0 - fy) * (1.0 - fx));
    add(y0, x0 + 1.0, (1.0 - fy) * fx);
    add(y0 + 1.0, x0, fy * (1.0 - fx));
    add(y0 + 1.0, x0 + 1.0, fy * fx);
}

fn check_offsets(x: &Tensor, k: &Conv2dKernel, off: &OffsetField) -> Result<(usize, usize)> {
    let (n, c_in, h, w) = x.dims();
    if c_in != k.c_in() {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: k.c_in(),
            got: c_in,
        });
    }
    let (oh, ow) = k.out_size(h, w)?;
    let expect = (n, 2 * k.k_h() * k.k_w(), oh, ow);
    if off.0.dims() != expect {
        return Err(Error::ShapeMismatch {
            axis: "offset",
            expected: expect.1 * expect.2 * expect.3,
            got: off.0.dims().1 * off.0.dims().2 * off.0.dims().3,
        });
    }
    Ok((oh, ow))
}

/// Deformable cross-correlation. Kernel tap (u, v) at output position
/// (oy, ox) samples the input at
/// (oy*stride - padding + u + dy, ox*stride - padding + v + dx) where
/// (dy, dx) come from the offset field. With all-zero offsets this is
/// bitwise-identical to [`crate::tensor::conv2d`]: same taps, same
/// accumulation order.
pub fn deform_conv2d(x: &Tensor, k: &Conv2dKernel, off: &OffsetField) -> Result<Tensor> {
    let (oh, ow) = check_offsets(x, k, off)?;
    let (n, c_in, _, _) = x.dims();
    let (c_out, _, k_h, k_w) = k.weights.dims();
    let stride = k.stride;
    let pad = k.padding as f64;

    let mut out = Tensor::zeros((n, c_out, oh, ow));
    for b in 0..n {
        for oc in 0..c_out {
            let bias = k.bias.as_ref().map_or(0.0, |v| v[oc]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c_in {
                        for u in 0..k_h {
                            for v in 0..k_w {
                                let tap = u * k_w + v;
                                let dy = off.0.at(b, 2 * tap, oy, ox);
                                let dx = off.0.at(b, 2 * tap + 1, oy, ox);
                                let sy = (oy * stride + u) as f64 - pad + dy;
                                let sx = (ox * stride + v) as f64 - pad + dx;
                                let sample = bilinear_sample(x, b, ic, sy, sx);
                                if sample != 0.0 {
                                    acc += k.weights.at(oc, ic, u, v) * sample;
                                }
                            }
                        }
                    }
                    out.set(b, oc, oy, ox, acc + bias);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`deform_conv2d`]: input, weights, bias, and offsets.
#[derive(Debug, Clone)]
pub struct DeformGrads {
    pub grad_input: Tensor,
    pub grad_kernel: KernelGrad,
    pub grad_offsets: OffsetField,
}

pub fn deform_conv2d_vjp(
    x: &Tensor,
    k: &Conv2dKernel,
    off: &OffsetField,
    grad_out: &Tensor,
) -> Result<DeformGrads> {
    let (oh, ow) = check_offsets(x, k, off)?;
    let (n, c_in, _, _) = x.dims();
    let (c_out, _, k_h, k_w) = k.weights.dims();
    if grad_out.dims() != (n, c_out, oh, ow) {
        return Err(Error::ShapeMismatch {
            axis: "grad_out",
            expected: n * c_out * oh * ow,
            got: grad_out.len(),
        });
    }
    let stride = k.stride;
    let pad = k.padding as f64;

    let mut grad_input = Tensor::zeros(x.dims());
    let mut grad_weights = Tensor::zeros(k.weights.dims());
    let mut grad_bias = k.bias.as_ref().map(|b| vec![0.0; b.len()]);
    let mut grad_off = Tensor::zeros(off.0.dims());

    for b in 0..n {
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out.at(b, oc, oy, ox);
                    if let Some(gb) = grad_bias.as_mut() {
                        gb[oc] += g;
                    }
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..c_in {
                        for u in 0..k_h {
                            for v in 0..k_w {
                                let tap = u * k_w + v;
                                let dy = off.0.at(b, 2 * tap, oy, ox);
                                let dx = off.0.at(b, 2 * tap + 1, oy, ox);
                                let sy = (oy * stride + u) as f64 - pad + dy;
                                let sx = (ox * stride + v) as f64 - pad + dx;
                                let weight = k.weights.at(oc, ic, u, v);
                                let (value, d_dy, d_dx) =
                                    bilinear_sample_with_coord_grad(x, b, ic, sy, sx);
                                let gw = grad_weights.idx(oc, ic, u, v);
                                grad_weights.data_mut()[gw] += g * value;
                                bilinear_sample_scatter(
                                    &mut grad_input,
                                    b,
                                    ic,
                                    sy,
                                    sx,
                                    g * weight,
                                );
                                let gy = grad_off.idx(b, 2 * tap, oy, ox);
                                grad_off.data_mut()[gy] += g * weight * d_dy;
                                let gx = grad_off.idx(b, 2 * tap + 1, oy, ox);
                                grad_off.data_mut()[gx] += g * weight * d_dx;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(DeformGrads {
        grad_input,
        grad_kernel: KernelGrad {
            weights: grad_weights,
            bias: grad_bias,
        },
        grad_offsets: OffsetField(grad_off),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::uniform_noise;
    use crate::tensor::{conv2d, finite_diff_grad};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(c_out: usize, c_in: usize, k: usize, stride: usize, seed: u64) -> Conv2dKernel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c_out * c_in * k * k)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Conv2dKernel::new(
            Tensor::from_vec((c_out, c_in, k, k), data).unwrap(),
            None,
            stride,
            (k - 1) / 2,
        )
        .unwrap()
    }

    /// Offsets with fractional parts bounded into (0.1, 0.4): the coordinate
    /// gradient is discontinuous exactly on the integer lattice.
    fn lattice_avoiding_offsets(dims: (usize, usize, usize, usize), seed: u64) -> OffsetField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = dims.0 * dims.1 * dims.2 * dims.3;
        let data = (0..len)
            .map(|_| {
                let magnitude = rng.random_range(0.1..0.4);
                let whole = rng.random_range(-1i32..=1) as f64;
                whole + magnitude
            })
            .collect();
        OffsetField(Tensor::from_vec(dims, data).unwrap())
    }

    #[test]
    fn sampling_at_grid_points_is_exact() {
        let x = uniform_noise((1, 2, 4, 5), 3);
        for c in 0..2 {
            for y in 0..4 {
                for xx in 0..5 {
                    let s = bilinear_sample(&x, 0, c, y as f64, xx as f64);
                    assert_eq!(s.to_bits(), x.at(0, c, y, xx).to_bits());
                }
            }
        }
    }

    #[test]
    fn sampling_far_outside_gives_zero() {
        let x = uniform_noise((1, 1, 4, 4), 4);
        assert_eq!(bilinear_sample(&x, 0, 0, -5.0, -5.0), 0.0);
        assert_eq!(bilinear_sample(&x, 0, 0, 10.0, 2.0), 0.0);
        assert_eq!(bilinear_sample(&x, 0, 0, 2.0, 4.0), 0.0);
    }

    #[test]
    fn partial_overlap_uses_zero_for_outside_corners() {
        let x = Tensor::from_vec((1, 1, 1, 1), vec![8.0]).unwrap();
        // Half a pixel above the single sample: only the lower corner is in.
        let v = bilinear_sample(&x, 0, 0, -0.5, 0.0);
        assert!((v - 4.0).abs() < 1e-15);
    }

    #[test]
    fn coordinate_gradient_matches_finite_differences() {
        let x = uniform_noise((1, 1, 6, 6), 5);
        let step = 1e-6;
        for &(y, xx) in &[(1.3, 2.7), (0.2, 4.3), (3.8, 1.1), (-0.4, 2.2)] {
            let (_, d_dy, d_dx) = bilinear_sample_with_coord_grad(&x, 0, 0, y, xx);
            let fy = (bilinear_sample(&x, 0, 0, y + step, xx)
                - bilinear_sample(&x, 0, 0, y - step, xx))
                / (2.0 * step);
            let fx = (bilinear_sample(&x, 0, 0, y, xx + step)
                - bilinear_sample(&x, 0, 0, y, xx - step))
                / (2.0 * step);
            assert!((d_dy - fy).abs() / d_dy.abs().max(fy.abs()).max(1e-6) < 1e-5);
            assert!((d_dx - fx).abs() / d_dx.abs().max(fx.abs()).max(1e-6) < 1e-5);
        }
    }

    #[test]
    fn zero_offsets_reproduce_conv2d_bitwise() {
        let x = uniform_noise((2, 3, 7, 6), 6);
        for (stride, seed) in [(1usize, 7u64), (2, 8)] {
            let k = random_kernel(4, 3, 3, stride, seed);
            let (oh, ow) = k.out_size(7, 6).unwrap();
            let off = OffsetField::zeros(2, 3, 3, oh, ow);
            let deformed = deform_conv2d(&x, &k, &off).unwrap();
            let plain = conv2d(&x, &k).unwrap();
            assert_eq!(deformed.dims(), plain.dims());
            for (a, b) in deformed.data().iter().zip(plain.data().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn unit_x_offset_shifts_left_with_zero_fill() {
        let x = uniform_noise((1, 1, 3, 4), 9);
        let k = Conv2dKernel::new(
            Tensor::from_vec((1, 1, 1, 1), vec![1.0]).unwrap(),
            None,
            1,
            0,
        )
        .unwrap();
        let mut off = OffsetField::zeros(1, 1, 1, 3, 4);
        for y in 0..3 {
            for xx in 0..4 {
                off.0.set(0, 1, y, xx, 1.0); // +1 in x
            }
        }
        let out = deform_conv2d(&x, &k, &off).unwrap();
        for y in 0..3 {
            for xx in 0..3 {
                assert_eq!(out.at(0, 0, y, xx), x.at(0, 0, y, xx + 1));
            }
            assert_eq!(out.at(0, 0, y, 3), 0.0);
        }
    }

    #[test]
    fn matches_naive_sampling_oracle_with_small_offsets() {
        let x = uniform_noise((1, 2, 6, 6), 10);
        let k = random_kernel(3, 2, 3, 1, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let off_data: Vec<f64> = (0..18 * 36).map(|_| rng.random_range(-0.5..0.5)).collect();
        let off = OffsetField(Tensor::from_vec((1, 18, 6, 6), off_data).unwrap());
        let got = deform_conv2d(&x, &k, &off).unwrap();

        // Independent per-point oracle: recompute every sample by hand.
        let naive_sample = |c: usize, y: f64, xx: f64| -> f64 {
            let mut acc = 0.0;
            for (dy, dx) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                let yy = y.floor() + dy;
                let xxx = xx.floor() + dx;
                if yy >= 0.0 && yy < 6.0 && xxx >= 0.0 && xxx < 6.0 {
                    let wy = if dy == 0.0 { 1.0 - (y - y.floor()) } else { y - y.floor() };
                    let wx = if dx == 0.0 { 1.0 - (xx - xx.floor()) } else { xx - xx.floor() };
                    acc += wy * wx * x.at(0, c, yy as usize, xxx as usize);
                }
            }
            acc
        };
        for oc in 0..3 {
            for oy in 0..6 {
                for ox in 0..6 {
                    let mut expect = 0.0;
                    for ic in 0..2 {
                        for u in 0..3 {
                            for v in 0..3 {
                                let tap = u * 3 + v;
                                let sy = (oy + u) as f64 - 1.0 + off.0.at(0, 2 * tap, oy, ox);
                                let sx = (ox + v) as f64 - 1.0 + off.0.at(0, 2 * tap + 1, oy, ox);
                                expect += k.weights.at(oc, ic, u, v) * naive_sample(ic, sy, sx);
                            }
                        }
                    }
                    assert!((got.at(0, oc, oy, ox) - expect).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn zero_offset_equivalence_over_shapes(
            h in 3usize..=7,
            w in 3usize..=7,
            stride in 1usize..=2,
            seed in 0u64..500,
        ) {
            let x = uniform_noise((1, 2, h, w), seed);
            let k = random_kernel(2, 2, 3, stride, seed + 1);
            if let Ok((oh, ow)) = k.out_size(h, w) {
                let off = OffsetField::zeros(1, 3, 3, oh, ow);
                let deformed = deform_conv2d(&x, &k, &off).unwrap();
                let plain = conv2d(&x, &k).unwrap();
                for (a, b) in deformed.data().iter().zip(plain.data().iter()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }

        // Superposition in the input and in the kernel for fixed offsets.
        #[test]
        fn is_linear_in_input_and_kernel(seed in 0u64..200, alpha in -2.0..2.0f64) {
            let x = uniform_noise((1, 2, 5, 5), seed);
            let y = uniform_noise((1, 2, 5, 5), seed + 1);
            let k = random_kernel(2, 2, 3, 1, seed + 2);
            let off = lattice_avoiding_offsets((1, 18, 5, 5), seed + 3);

            let mut mixed = x.clone();
            mixed.axpy(alpha, &y);
            let lhs = deform_conv2d(&mixed, &k, &off).unwrap();
            let mut rhs = deform_conv2d(&x, &k, &off).unwrap();
            rhs.axpy(alpha, &deform_conv2d(&y, &k, &off).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);

            let k2 = random_kernel(2, 2, 3, 1, seed + 4);
            let mut mixed_k = k.clone();
            mixed_k.weights.axpy(alpha, &k2.weights);
            let lhs = deform_conv2d(&x, &mixed_k, &off).unwrap();
            let mut rhs = deform_conv2d(&x, &k, &off).unwrap();
            rhs.axpy(alpha, &deform_conv2d(&x, &k2, &off).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let x = uniform_noise((1, 2, 6, 5), 20);
        let k = random_kernel(3, 2, 3, 1, 21);
        let off = lattice_avoiding_offsets((1, 18, 6, 5), 22);
        let g = uniform_noise((1, 3, 6, 5), 23);
        let grads = deform_conv2d_vjp(&x, &k, &off, &g).unwrap();

        let loss = |xt: &Tensor, kt: &Tensor, ot: &Tensor| -> f64 {
            let kk = Conv2dKernel::new(kt.clone(), None, 1, 1).unwrap();
            let out = deform_conv2d(xt, &kk, &OffsetField(ot.clone())).unwrap();
            out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };

        let max_rel = |got: &Tensor, fd: &Tensor| {
            got.data()
                .iter()
                .zip(fd.data().iter())
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
                .fold(0.0, f64::max)
        };

        let fd_x =
            finite_diff_grad(&|t: &Tensor| Ok(loss(t, &k.weights, &off.0)), &x, 1e-5).unwrap();
        assert!(max_rel(&grads.grad_input, &fd_x) < 1e-4, "input grads");

        let fd_k =
            finite_diff_grad(&|t: &Tensor| Ok(loss(&x, t, &off.0)), &k.weights, 1e-5).unwrap();
        assert!(max_rel(&grads.grad_kernel.weights, &fd_k) < 1e-4, "kernel grads");

        let fd_o =
            finite_diff_grad(&|t: &Tensor| Ok(loss(&x, &k.weights, t)), &off.0, 1e-5).unwrap();
        assert!(max_rel(&grads.grad_offsets.0, &fd_o) < 1e-4, "offset grads");
    }

    #[test]
    fn offset_shape_mismatch_is_rejected() {
        let x = uniform_noise((1, 2, 5, 5), 30);
        let k = random_kernel(2, 2, 3, 1, 31);
        let off = OffsetField::zeros(1, 3, 3, 4, 5); // wrong H_out
        assert!(matches!(
            deform_conv2d(&x, &k, &off),
            Err(Error::ShapeMismatch { axis: "offset", .. })
        ));
    }
}
