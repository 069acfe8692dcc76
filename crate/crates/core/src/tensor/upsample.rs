//! Bilinear 2x upsampling with half-pixel-center alignment.

use super::Tensor;

/// Map output coordinate `o` to the source coordinate with half-pixel
/// centers, clamped to the valid range.
#[inline]
fn source_coord(o: usize, in_size: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (in_size - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_size - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear x2 upsampling: output dims (n, c, 2h, 2w). Output coordinate `o`
/// reads input coordinate (o + 0.5)/2 - 0.5, clamped. Preserves constants
/// exactly and never exceeds the input value range.
pub fn upsample_bilinear_x2(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims();
    if h == 0 || w == 0 {
        return Tensor::zeros((n, c, 2 * h, 2 * w));
    }
    let mut out = Tensor::zeros((n, c, 2 * h, 2 * w));
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..2 * h {
                let (y0, y1, fy) = source_coord(oy, h);
                for ox in 0..2 * w {
                    let (x0, x1, fx) = source_coord(ox, w);
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
}

/// Adjoint of [`upsample_bilinear_x2`]: scatters the output gradient back to
/// the four source corners with the interpolation weights.
pub fn upsample_bilinear_x2_vjp(grad_out: &Tensor, in_dims: (usize, usize, usize, usize)) -> Tensor {
    let (n, c, h, w) = in_dims;
    assert_eq!(
        grad_out.dims(),
        (n, c, 2 * h, 2 * w),
        "upsample vjp dims mismatch"
    );
    let mut grad_in = Tensor::zeros(in_dims);
    if h == 0 || w == 0 {
        return grad_in;
    }
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..2 * h {
                let (y0, y1, fy) = source_coord(oy, h);
                for ox in 0..2 * w {
                    let (x0, x1, fx) = source_coord(ox, w);
                    let g = grad_out.at(b, ch, oy, ox);
                    let i00 = grad_in.idx(b, ch, y0, x0);
                    grad_in.data_mut()[i00] += (1.0 - fy) * (1.0 - fx) * g;
                    let i01 = grad_in.idx(b, ch, y0, x1);
                    grad_in.data_mut()[i01] += (1.0 - fy) * fx * g;
                    let i10 = grad_in.idx(b, ch, y1, x0);
                    grad_in.data_mut()[i10] += fy * (1.0 - fx) * g;
                    let i11 = grad_in.idx(b, ch, y1, x1);
                    grad_in.data_mut()[i11] += fy * fx * g;
                }
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn preserves_constants_exactly() {
        let x = Tensor::filled((1, 2, 3, 5), 2.75);
        let y = upsample_bilinear_x2(&x);
        assert_eq!(y.dims(), (1, 2, 6, 10));
        assert!(y.data().iter().all(|&v| v == 2.75));
    }

    #[test]
    fn two_pixel_row_interpolates_with_quarter_weights() {
        let (a, b) = (1.0, 5.0);
        let x = Tensor::from_vec((1, 1, 1, 2), vec![a, b]).unwrap();
        let y = upsample_bilinear_x2(&x);
        assert_eq!(y.dims(), (1, 1, 2, 4));
        let expect = [a, 0.75 * a + 0.25 * b, 0.25 * a + 0.75 * b, b];
        for (row, _) in [(0, ()), (1, ())] {
            for (i, e) in expect.iter().enumerate() {
                assert!((y.at(0, 0, row, i) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec((1, 2, 4, 4), data).unwrap();
        let g_data = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = Tensor::from_vec((1, 2, 8, 8), g_data).unwrap();

        let grad = upsample_bilinear_x2_vjp(&g, x.dims());
        let fd = finite_diff_grad(
            &|t: &Tensor| {
                let y = upsample_bilinear_x2(t);
                Ok(y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        let max_rel = grad
            .data()
            .iter()
            .zip(fd.data().iter())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
            .fold(0.0, f64::max);
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    proptest! {
        // Interpolation never leaves the input value range.
        #[test]
        fn preserves_min_max_bounds(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let x = Tensor::from_vec((1, 2, 3, 5), data).unwrap();
            let y = upsample_bilinear_x2(&x);
            for &v in y.data() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
