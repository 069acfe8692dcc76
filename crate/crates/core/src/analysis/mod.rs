//! Analytical cost model, pyramid correlation, and the equivariance metric.

mod correlation;
mod equivariance;
mod flops;

pub use correlation::{correlation_matrix, CorrelationReport};
pub use equivariance::{
    averaging_layer, equivariance_error, equivariance_separation, EquivarianceCheck,
};
pub use flops::{
    deform_overhead_factor, flops_conv2d, flops_deform_conv2d, flops_report, head_flops_ratio,
    measured_conv2d_macs, pconv_cost_factors, pyramid_area_ratios, CostModelInput, FlopsReport,
    LevelCost, SepcOverheads, SizeMode,
};

/// Format with 6 significant digits, in the style of printf's %.6g:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros trimmed.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.5e}", x);
    let (_, exp_str) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp_str.parse().expect("exponent parses");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let (mantissa, _) = sci.split_once('e').unwrap();
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
