//! Central finite differences: the independent gradient oracle used by every
//! VJP check in the test suites.

use super::Tensor;
use crate::error::Result;

/// Central-difference gradient of a scalar-valued function:
/// g_i = (f(x + step*e_i) - f(x - step*e_i)) / (2*step).
///
/// Errors from `f` propagate.
pub fn finite_diff_grad(
    f: &dyn Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    step: f64,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.dims());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}
