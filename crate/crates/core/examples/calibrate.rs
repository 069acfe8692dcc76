//! Regenerates the golden-threshold table committed in src/calibration.txt.
//! Run after any change to the kernels or the truncation-radius rule and
//! review the diff before committing.

use sepc_core::analysis::equivariance_separation;
use sepc_core::metrics::interior_max_abs_diff;
use sepc_core::scale_space::{blur_radius, gaussian_blur, jump, scale_for_ratio, verify_lemma1};
use sepc_core::synth::band_limited_noise;

fn main() {
    let lemma_input = band_limited_noise((1, 1, 128, 128), 7, 2.0).unwrap();
    let lemma1 = verify_lemma1(&lemma_input, 1, 1, 0.5).unwrap();

    let semi_input = band_limited_noise((1, 1, 128, 128), 7, 2.0).unwrap();
    let (t1, t2) = (1.5, 1.5);
    let twice = gaussian_blur(&gaussian_blur(&semi_input, t1).unwrap(), t2).unwrap();
    let once = gaussian_blur(&semi_input, t1 + t2).unwrap();
    let semigroup = interior_max_abs_diff(&twice, &once, blur_radius(t1 + t2));

    let jump_twice = jump(&jump(&semi_input, 1, 0.5).unwrap(), 1, 0.5).unwrap();
    let jump_once = jump(&semi_input, 2, 0.5).unwrap();
    let r = blur_radius(scale_for_ratio(0.25, 0.5).unwrap());
    let border = (r as f64 / 4.0).ceil() as usize + 2;
    let jump_compose = interior_max_abs_diff(&jump_twice, &jump_once, border);

    let equi = equivariance_separation(256, 4, 1, 2.0, 7).unwrap();

    println!("lemma1_m1_n1 = {lemma1:.6e}");
    println!("semigroup_max_abs = {semigroup:.6e}");
    println!("jump_compose_max_abs = {jump_compose:.6e}");
    println!("equivariance_gaussian = {:.6e}", equi.gaussian_error);
    println!("equivariance_control = {:.6e}", equi.control_error);
}
