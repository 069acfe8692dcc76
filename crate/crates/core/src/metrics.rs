//! Interior comparison metrics. The continuum identities verified in this
//! crate never hold at image borders (zero padding bleeds in), so every
//! verification metric excludes a border band.

use crate::tensor::Tensor;

/// Relative L2 discrepancy ||a - b|| / ||b|| over the interior obtained by
/// excluding `border` pixels on every side. Returns 0 when the interior of
/// `b` is identically zero and `a` matches it.
pub fn interior_rel_l2(a: &Tensor, b: &Tensor, border: usize) -> f64 {
    assert_eq!(a.dims(), b.dims(), "interior_rel_l2 dims mismatch");
    let (n, c, h, w) = a.dims();
    if h <= 2 * border || w <= 2 * border {
        return 0.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for bi in 0..n {
        for ch in 0..c {
            for y in border..h - border {
                for x in border..w - border {
                    let va = a.at(bi, ch, y, x);
                    let vb = b.at(bi, ch, y, x);
                    num += (va - vb) * (va - vb);
                    den += vb * vb;
                }
            }
        }
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Maximum absolute difference over the interior.
pub fn interior_max_abs_diff(a: &Tensor, b: &Tensor, border: usize) -> f64 {
    assert_eq!(a.dims(), b.dims(), "interior_max_abs_diff dims mismatch");
    let (n, c, h, w) = a.dims();
    if h <= 2 * border || w <= 2 * border {
        return 0.0;
    }
    let mut max = 0.0f64;
    for bi in 0..n {
        for ch in 0..c {
            for y in border..h - border {
                for x in border..w - border {
                    max = max.max((a.at(bi, ch, y, x) - b.at(bi, ch, y, x)).abs());
                }
            }
        }
    }
    max
}
