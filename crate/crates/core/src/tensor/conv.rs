//! 2-D cross-correlation with zero padding, and its reverse-mode derivative.

use super::Tensor;
use crate::error::{Error, Result};

/// A 2-D convolution kernel: weights shaped (c_out, c_in, k_h, k_w), an
/// optional per-output-channel bias, stride in {1, 2} and zero padding.
#[derive(Debug, Clone)]
pub struct Conv2dKernel {
    pub weights: Tensor,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dKernel {
    pub fn new(
        weights: Tensor,
        bias: Option<Vec<f64>>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (c_out, c_in, k_h, k_w) = weights.dims();
        if c_out < 1 || c_in < 1 {
            return Err(Error::InvalidKernel(format!(
                "channel counts must be >= 1, got c_out={c_out}, c_in={c_in}"
            )));
        }
        if k_h % 2 == 0 || k_w % 2 == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel size must be odd, got {k_h}x{k_w}"
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidKernel(format!(
                "stride must be 1 or 2, got {stride}"
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::ShapeMismatch {
                    axis: "bias",
                    expected: c_out,
                    got: b.len(),
                });
            }
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weights.dims().0
    }

    pub fn c_in(&self) -> usize {
        self.weights.dims().1
    }

    pub fn k_h(&self) -> usize {
        self.weights.dims().2
    }

    pub fn k_w(&self) -> usize {
        self.weights.dims().3
    }

    /// Output spatial size for an input of the given size, or an error when
    /// the result would be degenerate.
    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_extent(h, self.padding, self.k_h(), self.stride);
        let ow = out_extent(w, self.padding, self.k_w(), self.stride);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            (None, _) => Err(Error::DegenerateOutput {
                axis: "height",
                size: degenerate_extent(h, self.padding, self.k_h(), self.stride),
            }),
            (_, None) => Err(Error::DegenerateOutput {
                axis: "width",
                size: degenerate_extent(w, self.padding, self.k_w(), self.stride),
            }),
        }
    }
}

fn out_extent(size: usize, padding: usize, k: usize, stride: usize) -> Option<usize> {
    let padded = size as i64 + 2 * padding as i64 - k as i64;
    if padded < 0 {
        return None;
    }
    Some((padded / stride as i64) as usize + 1)
}

fn degenerate_extent(size: usize, padding: usize, k: usize, stride: usize) -> i64 {
    (size as i64 + 2 * padding as i64 - k as i64) / stride as i64 + 1
}

/// Gradients of a convolution: input, weights, and optionally bias.
#[derive(Debug, Clone)]
pub struct GradTriple {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Option<Vec<f64>>,
}

/// Weight/bias gradient for a single kernel.
#[derive(Debug, Clone)]
pub struct KernelGrad {
    pub weights: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl KernelGrad {
    pub fn zeros_like(k: &Conv2dKernel) -> Self {
        Self {
            weights: Tensor::zeros(k.weights.dims()),
            bias: k.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn accumulate(&mut self, other: &KernelGrad) {
        self.weights.axpy(1.0, &other.weights);
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }
}

/// Cross-correlation with zero padding.
///
/// The accumulation order per output element is fixed: input channel outer,
/// then kernel rows, then kernel columns. Results are bit-reproducible for
/// identical inputs.
pub fn conv2d(x: &Tensor, k: &Conv2dKernel) -> Result<Tensor> {
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
    let stride = k.stride;
    let pad = k.padding as i64;

    let mut out = Tensor::zeros((n, c_out, oh, ow));
    for b in 0..n {
        for oc in 0..c_out {
            let bias = k.bias.as_ref().map_or(0.0, |v| v[oc]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c_in {
                        for u in 0..k_h {
                            let iy = (oy * stride) as i64 + u as i64 - pad;
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            for v in 0..k_w {
                                let ix = (ox * stride) as i64 + v as i64 - pad;
                                if ix < 0 || ix >= w as i64 {
                                    continue;
                                }
                                acc += k.weights.at(oc, ic, u, v)
                                    * x.at(b, ic, iy as usize, ix as usize);
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

/// Reverse-mode derivative of [`conv2d`] for the scalar loss
/// L = sum(grad_out * conv2d(x, k)).
pub fn conv2d_vjp(x: &Tensor, k: &Conv2dKernel, grad_out: &Tensor) -> Result<GradTriple> {
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
    let expect = (n, c_out, oh, ow);
    if grad_out.dims() != expect {
        return Err(Error::ShapeMismatch {
            axis: "grad_out",
            expected: expect.0 * expect.1 * expect.2 * expect.3,
            got: grad_out.len(),
        });
    }
    let stride = k.stride;
    let pad = k.padding as i64;

    let mut grad_input = Tensor::zeros(x.dims());
    let mut grad_weights = Tensor::zeros(k.weights.dims());
    let mut grad_bias = k.bias.as_ref().map(|b| vec![0.0; b.len()]);

    for b in 0..n {
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out.at(b, oc, oy, ox);
                    if let Some(gb) = grad_bias.as_mut() {
                        gb[oc] += g;
                    }
                    for ic in 0..c_in {
                        for u in 0..k_h {
                            let iy = (oy * stride) as i64 + u as i64 - pad;
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            for v in 0..k_w {
                                let ix = (ox * stride) as i64 + v as i64 - pad;
                                if ix < 0 || ix >= w as i64 {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                let gi = grad_input.idx(b, ic, iy, ix);
                                grad_input.data_mut()[gi] += g * k.weights.at(oc, ic, u, v);
                                let gw = grad_weights.idx(oc, ic, u, v);
                                grad_weights.data_mut()[gw] += g * x.at(b, ic, iy, ix);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(GradTriple {
        grad_input,
        grad_weights,
        grad_bias,
    })
}
