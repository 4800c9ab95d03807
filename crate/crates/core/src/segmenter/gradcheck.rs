//! Central finite-difference check of [`backward`](super::backward).

use super::loss::loss;
use super::net::{backward, Segmenter};
use crate::error::Result;
use crate::tensorio::Tensor;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Max relative error over every parameter between the analytic gradient and
/// `(L(θ+h) − L(θ−h)) / 2h`.
///
/// Returns `Ok(None)` when some `±h` perturbation changes which ReLU units
/// are active: the loss is not smooth over the stencil there, so the central
/// difference is not a derivative estimate.
pub fn finite_difference_check(
    model: &Segmenter<f64>,
    image: &Tensor<f64>,
    target: &Tensor<u8>,
    weight: f64,
    step: f64,
    floor: f64,
) -> Result<Option<f64>> {
    let eval = |m: &Segmenter<f64>| -> Result<(f64, Vec<bool>)> {
        let f = m.forward(image)?;
        Ok((loss(&f.prob, target, weight)?.total, f.active_units()))
    };
    let base_pattern = model.forward(image)?.active_units();
    let (_, grad) = backward(model, image, target, weight)?;
    let mut worst = 0.0f64;
    let mut m = model.clone();
    for (i, &g) in grad.iter().enumerate() {
        let orig = m.params()[i];
        m.params_mut()[i] = orig + step;
        let (lp, pp) = eval(&m)?;
        m.params_mut()[i] = orig - step;
        let (lm, pm) = eval(&m)?;
        m.params_mut()[i] = orig;
        if pp != base_pattern || pm != base_pattern {
            return Ok(None);
        }
        worst = worst.max(relative_error(g, (lp - lm) / (2.0 * step), floor));
    }
    Ok(Some(worst))
}
