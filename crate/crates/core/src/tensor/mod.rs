//! Dense rank-4 tensor in (batch, channel, height, width) layout and the
//! convolution / upsampling kernels built on it.
//!
//! All values are `f64`; data is row-major in (n, c, h, w) order. Tensors are
//! immutable values once constructed and every operation here is a pure
//! function, so everything is safe to call concurrently.

mod conv;
mod fdiff;
mod io;
mod upsample;

pub use conv::{conv2d, conv2d_vjp, Conv2dKernel, GradTriple, KernelGrad};
pub use fdiff::finite_diff_grad;
pub use io::{
    pyramid_read, pyramid_write, tensor_read, tensor_write, SPYR_MAGIC, SPYR_VERSION, SPYT_MAGIC,
    SPYT_VERSION,
};
pub use upsample::{upsample_bilinear_x2, upsample_bilinear_x2_vjp};

use crate::error::{Error, Result};

/// Dense (n, c, h, w) tensor of doubles, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Validated constructor: data length must equal n*c*h*w and every value
    /// must be finite.
    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (n, c, h, w) = dims;
        let expected = n * c * h * w;
        if data.len() != expected {
            return Err(Error::DataLength {
                dims,
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Construct without finiteness/length validation. Callers must uphold
    /// `data.len() == n*c*h*w`.
    pub(crate) fn from_vec_unchecked(dims: (usize, usize, usize, usize), data: Vec<f64>) -> Self {
        let (n, c, h, w) = dims;
        debug_assert_eq!(data.len(), n * c * h * w);
        Self { n, c, h, w, data }
    }

    pub fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        let (n, c, h, w) = dims;
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn filled(dims: (usize, usize, usize, usize), value: f64) -> Self {
        let (n, c, h, w) = dims;
        Self {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub(crate) fn idx(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, b: usize, ch: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(b, ch, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, ch: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(b, ch, y, x);
        self.data[i] = v;
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// self += alpha * other. Panics on dim mismatch (internal use).
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(self.dims(), other.dims(), "axpy dims mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn add(&self, other: &Tensor) -> Self {
        assert_eq!(self.dims(), other.dims(), "add dims mismatch");
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims(), other.dims(), "max_abs_diff dims mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Crop to the top-left (h, w) window, or zero-pad at the bottom/right,
    /// so the result has exactly the requested spatial dims.
    pub fn fit_spatial(&self, h: usize, w: usize) -> Tensor {
        if self.h == h && self.w == w {
            return self.clone();
        }
        let mut out = Tensor::zeros((self.n, self.c, h, w));
        let copy_h = self.h.min(h);
        let copy_w = self.w.min(w);
        for b in 0..self.n {
            for ch in 0..self.c {
                for y in 0..copy_h {
                    let src = self.idx(b, ch, y, 0);
                    let dst = out.idx(b, ch, y, 0);
                    out.data[dst..dst + copy_w].copy_from_slice(&self.data[src..src + copy_w]);
                }
            }
        }
        out
    }

    /// Adjoint of `fit_spatial`: routes a gradient on the fitted output back
    /// to this tensor's shape (pad where cropped, crop where padded).
    pub fn fit_spatial_vjp(grad_out: &Tensor, h: usize, w: usize) -> Tensor {
        grad_out.fit_spatial(h, w)
    }
}
