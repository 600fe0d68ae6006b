use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares an analytic gradient with central differences and returns the
/// largest relative error `|a − n| / max(1e-8, |a| + |n|)` over all
/// coordinates.
///
/// `loss` returns the loss value and its analytic gradient at the given
/// parameters.
pub fn grad_check<F>(mut loss: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = loss(params);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss at base point = {value}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} params",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = loss(&probe).0;
        probe[i] = orig - eps;
        let minus = loss(&probe).0;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at perturbed coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
