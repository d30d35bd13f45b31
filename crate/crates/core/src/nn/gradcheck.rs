//! Finite-difference gradient checking.

use crate::error::{Error, Result};

/// Compares an analytic gradient against central finite differences of `f`.
///
/// Returns the max over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
/// Aborts with an error if `f` produces a non-finite value anywhere.
pub fn finite_diff_check(
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64> {
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} analytic entries", params.len()),
            format!("{}", analytic.len()),
        ));
    }
    let mut scratch = params.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let orig = scratch[i];
        scratch[i] = orig + eps;
        let plus = f(&scratch);
        scratch[i] = orig - eps;
        let minus = f(&scratch);
        scratch[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_check at coordinate {i} (f(+)={plus}, f(-)={minus})"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Same check restricted to a subset of coordinates, for large parameter sets.
pub fn finite_diff_check_sampled(
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
) -> Result<f64> {
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "finite_diff_check_sampled",
            format!("{} analytic entries", params.len()),
            format!("{}", analytic.len()),
        ));
    }
    let mut scratch = params.to_vec();
    let mut max_rel = 0.0f64;
    for &i in coords {
        let orig = scratch[i];
        scratch[i] = orig + eps;
        let plus = f(&scratch);
        scratch[i] = orig - eps;
        let minus = f(&scratch);
        scratch[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_check_sampled at coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
