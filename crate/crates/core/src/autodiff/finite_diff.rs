use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]; gradients smaller than this are
/// compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Central-difference gradient of a scalar function:
/// entry `i` is `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_difference_gradient(
    f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    let all: Vec<usize> = (0..x.len()).collect();
    let values = finite_difference_entries(f, x, h, &all)?;
    Tensor::new(x.shape(), values)
}

/// Central differences for the selected flat entries of `x` only.
pub fn finite_difference_entries(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
    entries: &[usize],
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(entries.len());
    for &i in entries {
        if i >= x.len() {
            return Err(Error::Invalid(format!(
                "entry {i} out of range for tensor of {} values",
                x.len()
            )));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite-difference probe of entry {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}
