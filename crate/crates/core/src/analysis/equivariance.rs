//! Executable form of the scale-equivariance claim: pyramid convolution
//! commutes with the jumping action on a Gaussian pyramid.
//!
//! Discretization, borders, and level-boundary term elimination keep the
//! continuum identity from holding exactly, so the checkable statement is a
//! separation: the commutation residual on a Gaussian pyramid is many times
//! smaller than the same residual on a spatially shuffled control pyramid
//! with identical marginal statistics.

use crate::error::{Error, Result};
use crate::metrics::interior_rel_l2;
use crate::pconv::{pconv_forward, FeaturePyramid, PConvLayer};
use crate::scale_space::{
    blur_radius, build_gaussian_pyramid, jump, scale_for_ratio, GaussianPyramid,
    GaussianPyramidSpec,
};
use crate::synth::{band_limited_noise, shuffle_spatial};
use crate::tensor::{Conv2dKernel, Tensor};

/// Interior relative L2 discrepancy between (i) jumping each level of the
/// PConv output down by m and (ii) PConv of the pyramid with its bottom m
/// levels dropped, averaged over the levels whose term structure matches in
/// both routes (all but the shifted pyramid's top level).
pub fn equivariance_error(
    p: &GaussianPyramid,
    layer: &PConvLayer,
    m: usize,
    s0: f64,
) -> Result<f64> {
    let count = p.levels.len();
    if count < m + 2 {
        return Err(Error::InsufficientLevels {
            need: m + 2,
            got: count,
        });
    }
    let full = FeaturePyramid::new(p.levels.clone())?;
    let convolved = pconv_forward(&full, layer)?;

    let shifted = FeaturePyramid::new(p.levels[m..].to_vec())?;
    let convolved_shifted = pconv_forward(&shifted, layer)?;

    // Border-contamination bookkeeping. The truncated blur kernels give hard
    // contamination widths: pyramid level l carries a band of its
    // construction blur's radius over 2^l; a pconv output inherits the widest
    // of its terms' bands (the upsampled term doubles the coarser level's
    // band); the jump smears route (i)'s band by its blur radius before
    // subsampling. Everything inside the resulting border is exact.
    let k_rad = (layer.kernel_size() - 1) / 2;
    let level_band = |l: usize| -> Result<usize> {
        if l == 0 {
            return Ok(0);
        }
        let r = blur_radius(scale_for_ratio(0.5f64.powi(l as i32), s0)?);
        Ok(r.div_ceil(1 << l))
    };
    let pconv_band = |bottom: usize, l: usize, top_excluded: usize| -> Result<usize> {
        let same = level_band(l)? + k_rad;
        let down = if l > bottom {
            (level_band(l - 1)? + k_rad).div_ceil(2)
        } else {
            0
        };
        let up = if l + 1 < top_excluded {
            2 * (level_band(l + 1)? + k_rad) + 2
        } else {
            0
        };
        Ok(same.max(down).max(up))
    };
    let r_jump = blur_radius(scale_for_ratio(0.5f64.powi(m as i32), s0)?);

    // Comparable levels: both routes drop the lower term at their bottom and
    // keep all three terms elsewhere, except route (ii)'s top level, which
    // loses its upper term while route (i)'s counterpart kept one.
    let comparable = count - m - 1;
    let mut total = 0.0;
    for l in 0..comparable {
        let band_jumped = (pconv_band(0, l, count)? + r_jump).div_ceil(1 << m);
        let band_direct = pconv_band(m, l + m, count)?;
        let border = band_jumped.max(band_direct);
        let target = convolved_shifted.level(l);
        let (_, _, h, w) = target.dims();
        if h <= 2 * border || w <= 2 * border {
            return Err(Error::InvalidConfig(format!(
                "level {l} comparison grid {h}x{w} has no interior left after \
                 excluding a border of {border}"
            )));
        }
        let jumped = jump(convolved.level(l), m, s0)?;
        total += interior_rel_l2(&jumped, target, border);
    }
    Ok(total / comparable as f64)
}

/// The committed separation check: Gaussian pyramid vs spatially shuffled
/// control, same marginals, same kernels, same metric.
#[derive(Debug, Clone, Copy)]
pub struct EquivarianceCheck {
    pub gaussian_error: f64,
    pub control_error: f64,
    /// control / gaussian; large means the Gaussian pyramid is special.
    pub ratio: f64,
}

/// 3x3 averaging kernels scaled per branch, the layer used by the committed
/// equivariance configuration. Same-dominant masses: the neighbor terms
/// compare a blur of t across routes against one of t*4^(+-1) (the jump acts
/// on the work-on grid, not the neighbor's), a scale-free mismatch that no
/// band-limiting removes, so they carry less weight than the aligned
/// same-level term.
pub fn averaging_layer(channels: usize) -> PConvLayer {
    let avg = |scale: f64, stride: usize| {
        let mut w = Tensor::zeros((channels, channels, 3, 3));
        for c in 0..channels {
            for u in 0..3 {
                for v in 0..3 {
                    w.set(c, c, u, v, scale / 9.0);
                }
            }
        }
        Conv2dKernel::new(w, None, stride, 1).unwrap()
    };
    PConvLayer::new(avg(0.25, 1), avg(1.0, 1), avg(0.25, 2)).unwrap()
}

/// Build the Gaussian and control pyramids for a seeded base image and
/// evaluate both equivariance errors.
pub fn equivariance_separation(
    size: usize,
    levels: usize,
    m: usize,
    s0: f64,
    seed: u64,
) -> Result<EquivarianceCheck> {
    let base = band_limited_noise((1, 1, size, size), seed, 2.0)?;
    let spec = GaussianPyramidSpec::new(s0, levels)?;
    let gaussian = build_gaussian_pyramid(&base, spec)?;

    let control_levels: Vec<Tensor> = gaussian
        .levels
        .iter()
        .enumerate()
        .map(|(l, t)| shuffle_spatial(t, seed.wrapping_mul(31).wrapping_add(101 + l as u64)))
        .collect();
    let control = GaussianPyramid {
        spec,
        levels: control_levels,
    };

    let layer = averaging_layer(1);
    let gaussian_error = equivariance_error(&gaussian, &layer, m, s0)?;
    let control_error = equivariance_error(&control, &layer, m, s0)?;
    Ok(EquivarianceCheck {
        gaussian_error,
        control_error,
        ratio: control_error / gaussian_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::thresholds;

    fn committed_pyramid(seed: u64) -> GaussianPyramid {
        let base = band_limited_noise((1, 1, 256, 256), seed, 2.0).unwrap();
        build_gaussian_pyramid(&base, GaussianPyramidSpec::new(2.0, 4).unwrap()).unwrap()
    }

    #[test]
    fn zero_shift_is_exact() {
        let p = committed_pyramid(7);
        let layer = averaging_layer(1);
        assert_eq!(equivariance_error(&p, &layer, 0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_pyramid_commutes_to_rounding() {
        let spec = GaussianPyramidSpec::new(2.0, 4).unwrap();
        let base = Tensor::filled((1, 1, 256, 256), 1.25);
        let p = build_gaussian_pyramid(&base, spec).unwrap();
        let layer = averaging_layer(1);
        let err = equivariance_error(&p, &layer, 1, 2.0).unwrap();
        assert!(err < 1e-10, "constant-pyramid residual {err}");
    }

    #[test]
    fn too_few_levels_is_an_error() {
        let p = committed_pyramid(7);
        let layer = averaging_layer(1);
        assert!(matches!(
            equivariance_error(&p, &layer, 3, 2.0),
            Err(Error::InsufficientLevels { need: 5, .. })
        ));
    }

    #[test]
    fn gaussian_pyramid_separates_from_shuffled_control() {
        let check = equivariance_separation(256, 4, 1, 2.0, 7).unwrap();
        let cal = thresholds();
        assert!(
            check.gaussian_error <= cal.equivariance_gaussian * 1.10,
            "gaussian error {} vs committed {}",
            check.gaussian_error,
            cal.equivariance_gaussian
        );
        assert!(
            check.control_error >= cal.equivariance_control * 0.90,
            "control error {} vs committed {}",
            check.control_error,
            cal.equivariance_control
        );
        assert!(
            check.ratio >= 5.0,
            "separation ratio {} below 5",
            check.ratio
        );
    }
}
