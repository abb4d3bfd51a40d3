use super::rng::Rng;
use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Denominator floor for the relative error; coordinates whose gradients are
/// both below it are effectively compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// Checks `loss_and_grad` at `params` against central differences.
///
/// `loss_and_grad` must be deterministic. At most `max_coords` coordinates are
/// probed; when there are more, a random subsample is drawn from `rng`.
pub fn finite_diff_grad_check<F>(
    mut loss_and_grad: F,
    params: &[f64],
    h: f64,
    tolerance: f64,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} out of range")));
    }
    let (loss, analytic) = loss_and_grad(params);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} at the base point")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let mut coords: Vec<usize> = (0..params.len()).collect();
    if coords.len() > max_coords {
        rng.shuffle(&mut coords);
        coords.truncate(max_coords);
        coords.sort_unstable();
    }

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: coords.len(),
        tolerance,
    };
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let (plus, _) = loss_and_grad(&probe);
        probe[i] = orig - h;
        let (minus, _) = loss_and_grad(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss while probing coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
