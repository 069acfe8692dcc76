//! Packaged finite-difference suites for every operation with a hand-written
//! reverse-mode derivative. Central differences with step 1e-5 in doubles;
//! linear operations are held to 1e-5 relative, the rest to 1e-4. Deformable
//! offsets are sampled with fractional parts in (0.1, 0.4): the sampling
//! gradient is discontinuous exactly on the integer lattice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::pconv::{
    bn_forward, bn_vjp, pconv_forward, pconv_vjp, BNState, BnMode, FeaturePyramid, PConvLayer,
};
use crate::sepc::{
    bilinear_sample, bilinear_sample_with_coord_grad, deform_conv2d, deform_conv2d_vjp,
    OffsetField,
};
use crate::synth::uniform_noise;
use crate::tensor::{
    conv2d, conv2d_vjp, finite_diff_grad, upsample_bilinear_x2, upsample_bilinear_x2_vjp,
    Conv2dKernel, Tensor,
};

pub const STEP: f64 = 1e-5;
pub const TOL_LINEAR: f64 = 1e-5;
pub const TOL_NONLINEAR: f64 = 1e-4;

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn max_rel(analytic: &Tensor, fd: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(fd.data().iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn pyramid_dot(a: &FeaturePyramid, b: &FeaturePyramid) -> f64 {
    a.levels()
        .iter()
        .zip(b.levels())
        .map(|(x, y)| dot(x, y))
        .sum()
}

fn lattice_avoiding_offsets(dims: (usize, usize, usize, usize), seed: u64) -> OffsetField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = dims.0 * dims.1 * dims.2 * dims.3;
    let data = (0..len)
        .map(|_| rng.random_range(-1i32..=1) as f64 + rng.random_range(0.1..0.4))
        .collect();
    OffsetField(Tensor::from_vec_unchecked(dims, data))
}

fn check_conv2d(seed: u64) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_noise((2, 3, 5, 5), rng.random());
    let k = Conv2dKernel::new(uniform_noise((4, 3, 3, 3), rng.random()), None, 2, 1)?;
    let g = uniform_noise((2, 4, 3, 3), rng.random());
    let grads = conv2d_vjp(&x, &k, &g)?;

    let fd_x = finite_diff_grad(&|t: &Tensor| Ok(dot(&conv2d(t, &k)?, &g)), &x, STEP)?;
    let fd_w = finite_diff_grad(
        &|w: &Tensor| {
            let kk = Conv2dKernel::new(w.clone(), None, 2, 1)?;
            Ok(dot(&conv2d(&x, &kk)?, &g))
        },
        &k.weights,
        STEP,
    )?;
    let err = max_rel(&grads.grad_input, &fd_x).max(max_rel(&grads.grad_weights, &fd_w));
    Ok(GradCheckResult {
        name: "conv2d",
        max_rel_err: err,
        tolerance: TOL_LINEAR,
    })
}

/// VJPs are exactly zero for a zero cotangent; asserted at zero tolerance.
fn check_zero_cotangent(seed: u64) -> Result<GradCheckResult> {
    let x = uniform_noise((1, 2, 5, 5), seed);
    let k = Conv2dKernel::new(uniform_noise((2, 2, 3, 3), seed + 1), None, 1, 1)?;
    let g = Tensor::zeros((1, 2, 5, 5));
    let grads = conv2d_vjp(&x, &k, &g)?;
    let err = grads.grad_input.max_abs().max(grads.grad_weights.max_abs());
    Ok(GradCheckResult {
        name: "conv2d_zero_cotangent",
        max_rel_err: err,
        tolerance: 0.0,
    })
}

fn check_upsample(seed: u64) -> Result<GradCheckResult> {
    let x = uniform_noise((1, 2, 4, 4), seed);
    let g = uniform_noise((1, 2, 8, 8), seed + 1);
    let grad = upsample_bilinear_x2_vjp(&g, x.dims());
    let fd = finite_diff_grad(&|t: &Tensor| Ok(dot(&upsample_bilinear_x2(t), &g)), &x, STEP)?;
    Ok(GradCheckResult {
        name: "upsample_bilinear_x2",
        max_rel_err: max_rel(&grad, &fd),
        tolerance: TOL_LINEAR,
    })
}

fn check_bilinear_sample(seed: u64) -> Result<GradCheckResult> {
    let x = uniform_noise((1, 1, 6, 6), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut err = 0.0f64;
    for _ in 0..16 {
        let y = rng.random_range(0i32..5) as f64 + rng.random_range(0.1..0.4);
        let xx = rng.random_range(0i32..5) as f64 + rng.random_range(0.1..0.4);
        let (_, d_dy, d_dx) = bilinear_sample_with_coord_grad(&x, 0, 0, y, xx);
        let fy = (bilinear_sample(&x, 0, 0, y + STEP, xx) - bilinear_sample(&x, 0, 0, y - STEP, xx))
            / (2.0 * STEP);
        let fx = (bilinear_sample(&x, 0, 0, y, xx + STEP) - bilinear_sample(&x, 0, 0, y, xx - STEP))
            / (2.0 * STEP);
        err = err
            .max((d_dy - fy).abs() / d_dy.abs().max(fy.abs()).max(1e-6))
            .max((d_dx - fx).abs() / d_dx.abs().max(fx.abs()).max(1e-6));
    }
    Ok(GradCheckResult {
        name: "bilinear_sample",
        max_rel_err: err,
        tolerance: TOL_NONLINEAR,
    })
}

fn check_deform_conv2d(seed: u64) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_noise((1, 2, 6, 5), rng.random());
    let k = Conv2dKernel::new(uniform_noise((3, 2, 3, 3), rng.random()), None, 1, 1)?;
    let off = lattice_avoiding_offsets((1, 18, 6, 5), rng.random());
    let g = uniform_noise((1, 3, 6, 5), rng.random());
    let grads = deform_conv2d_vjp(&x, &k, &off, &g)?;

    let loss = |xt: &Tensor, wt: &Tensor, ot: &Tensor| -> Result<f64> {
        let kk = Conv2dKernel::new(wt.clone(), None, 1, 1)?;
        Ok(dot(&deform_conv2d(xt, &kk, &OffsetField(ot.clone()))?, &g))
    };
    let fd_x = finite_diff_grad(&|t: &Tensor| loss(t, &k.weights, &off.0), &x, STEP)?;
    let fd_w = finite_diff_grad(&|t: &Tensor| loss(&x, t, &off.0), &k.weights, STEP)?;
    let fd_o = finite_diff_grad(&|t: &Tensor| loss(&x, &k.weights, t), &off.0, STEP)?;
    let err = max_rel(&grads.grad_input, &fd_x)
        .max(max_rel(&grads.grad_kernel.weights, &fd_w))
        .max(max_rel(&grads.grad_offsets.0, &fd_o));
    Ok(GradCheckResult {
        name: "deform_conv2d",
        max_rel_err: err,
        tolerance: TOL_NONLINEAR,
    })
}

fn check_pconv(seed: u64) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [(1, 2, 9, 8), (1, 2, 5, 4), (1, 2, 3, 2)];
    let p = FeaturePyramid::new(dims.iter().map(|&d| uniform_noise(d, rng.random())).collect())?;
    let layer = PConvLayer::kaiming(2, 2, 3, false, &mut rng);
    let g = FeaturePyramid::new(dims.iter().map(|&d| uniform_noise(d, rng.random())).collect())?;
    let (grad_p, grad_layer) = pconv_vjp(&p, &layer, &g)?;

    let mut err = 0.0f64;
    for l in 0..dims.len() {
        let fd = finite_diff_grad(
            &|t: &Tensor| {
                let mut levels: Vec<Tensor> = p.levels().to_vec();
                levels[l] = t.clone();
                Ok(pyramid_dot(
                    &pconv_forward(&FeaturePyramid::new(levels)?, &layer)?,
                    &g,
                ))
            },
            p.level(l),
            STEP,
        )?;
        err = err.max(max_rel(grad_p.level(l), &fd));
    }
    for (which, weights, grad) in [
        (0, &layer.w_up.weights, &grad_layer.w_up.weights),
        (1, &layer.w_same.weights, &grad_layer.w_same.weights),
        (2, &layer.w_down.weights, &grad_layer.w_down.weights),
    ] {
        let fd = finite_diff_grad(
            &|t: &Tensor| {
                let mut trial = layer.clone();
                match which {
                    0 => trial.w_up.weights = t.clone(),
                    1 => trial.w_same.weights = t.clone(),
                    _ => trial.w_down.weights = t.clone(),
                }
                Ok(pyramid_dot(&pconv_forward(&p, &trial)?, &g))
            },
            weights,
            STEP,
        )?;
        err = err.max(max_rel(grad, &fd));
    }
    Ok(GradCheckResult {
        name: "pconv",
        max_rel_err: err,
        tolerance: TOL_LINEAR,
    })
}

fn check_bn(seed: u64) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [(2, 3, 4, 4), (2, 3, 2, 2)];
    let p = FeaturePyramid::new(dims.iter().map(|&d| uniform_noise(d, rng.random())).collect())?;
    let g = FeaturePyramid::new(dims.iter().map(|&d| uniform_noise(d, rng.random())).collect())?;
    let mut err = 0.0f64;
    for mode in [BnMode::Integrated, BnMode::Single, BnMode::Independent] {
        let mut s = BNState::new(mode, 3, 2);
        for set in 0..s.gamma.len() {
            for ch in 0..3 {
                s.gamma[set][ch] = 0.75 + 0.2 * (set + ch) as f64;
                s.beta[set][ch] = -0.1 * ch as f64;
            }
        }
        let (grad_p, _) = bn_vjp(&p, &s, &g)?;
        for l in 0..2 {
            let fd = finite_diff_grad(
                &|t: &Tensor| {
                    let mut levels: Vec<Tensor> = p.levels().to_vec();
                    levels[l] = t.clone();
                    let mut st = s.clone();
                    Ok(pyramid_dot(
                        &bn_forward(&FeaturePyramid::new(levels)?, &mut st)?,
                        &g,
                    ))
                },
                p.level(l),
                STEP,
            )?;
            err = err.max(max_rel(grad_p.level(l), &fd));
        }
    }
    Ok(GradCheckResult {
        name: "bn_training",
        max_rel_err: err,
        tolerance: TOL_NONLINEAR,
    })
}

/// Run every suite with sub-seeds derived from `seed`.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckResult>> {
    Ok(vec![
        check_conv2d(seed)?,
        check_zero_cotangent(seed + 1)?,
        check_upsample(seed + 2)?,
        check_bilinear_sample(seed + 3)?,
        check_deform_conv2d(seed + 4)?,
        check_pconv(seed + 5)?,
        check_bn(seed + 6)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_at_their_tolerances() {
        let results = run_all(0).unwrap();
        assert_eq!(results.len(), 7);
        for r in &results {
            assert!(
                r.passed(),
                "{}: {} > tolerance {}",
                r.name,
                r.max_rel_err,
                r.tolerance
            );
        }
    }
}
