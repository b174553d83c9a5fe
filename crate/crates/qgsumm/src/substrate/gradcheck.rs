//! Central finite differences: the independent gradient oracle.

use crate::error::Result;
use crate::substrate::tensor::Tensor;

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central-difference gradient of a scalar-valued function at `x`:
/// (f(x + eps e_k) - f(x - eps e_k)) / (2 eps) per coordinate.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[k] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[k] = orig;
        grad.data_mut()[k] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Relative error with an absolute floor on the denominator, so gradients
/// near zero are compared at an absolute tolerance instead of blowing up.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Worst relative error between an analytic gradient and its oracle.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}
