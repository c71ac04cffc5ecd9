//! Central finite differences as an independent gradient oracle.
//!
//! Nothing here touches the tape. Tests compute a numerical gradient of a
//! closed-box scalar function and compare it against whatever the tape
//! produced, so a bug would have to appear in two unrelated code paths to go
//! unnoticed.

use super::{Scalar, Tensor};
use crate::error::Result;

/// Central-difference gradient of `eval` at `at`.
///
/// Each element is perturbed by `h = base_step * max(1, |x|)` in both
/// directions. Run this with `F = f64`; at `base_step = 1e-5` the combined
/// truncation and roundoff error stays near 1e-10 for well-scaled functions,
/// comfortably under the 1e-4 comparison tolerances used by the tests.
pub fn numerical_gradient<F, E>(mut eval: E, at: &Tensor<F>, base_step: f64) -> Result<Tensor<F>>
where
    F: Scalar,
    E: FnMut(&Tensor<F>) -> Result<F>,
{
    let mut point = at.clone();
    let mut grad = Tensor::zeros(at.shape().to_vec());
    for i in 0..point.numel() {
        let x = point.data()[i];
        let h = F::from_f64(base_step) * F::one().max(x.abs());
        let xp = x + h;
        let xm = x - h;
        point.data_mut()[i] = xp;
        let fp = eval(&point)?;
        point.data_mut()[i] = xm;
        let fm = eval(&point)?;
        point.data_mut()[i] = x;
        // xp - xm is the step that was actually applied after rounding.
        grad.data_mut()[i] = (fp - fm) / (xp - xm);
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
///
/// The floor keeps finite-difference noise on near-zero gradients from
/// registering as error while leaving comparisons of ordinary magnitudes
/// fully relative.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-6)
}

/// Largest elementwise [`relative_error`] between two same-shape tensors.
///
/// Panics if the shapes differ; this is a verification helper, a shape
/// mismatch means the test itself is wrong.
pub fn max_relative_error<F: Scalar>(analytic: &Tensor<F>, numeric: &Tensor<F>) -> f64 {
    assert_eq!(
        analytic.shape(),
        numeric.shape(),
        "gradient comparison requires equal shapes"
    );
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a.as_f64(), n.as_f64()))
        .fold(0.0, f64::max)
}
