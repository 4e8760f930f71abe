use serde::Serialize;

use super::{backward, forward_loss, Batch, ModelParams};
use crate::error::Result;

/// Smallest denominator used for the relative error. Coordinates whose
/// gradient is below it are in effect judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub passed: bool,
}

fn objective(params: &ModelParams, batch: &Batch, weight_decay: f64) -> Result<f64> {
    let data = forward_loss(params, batch)?.mean_loss;
    let sq: f64 = params.weights.iter().map(|w| w * w).sum();
    Ok(data + 0.5 * weight_decay * sq)
}

/// Compares the analytic gradient of `mean_loss + weight_decay/2 * |w|^2`
/// with central differences `(f(w + h e_i) - f(w - h e_i)) / 2h` on every
/// coordinate. Relative error is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check(
    params: &ModelParams,
    batch: &Batch,
    weight_decay: f64,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = backward(params, batch, weight_decay)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        coords_checked: analytic.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        passed: true,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let w0 = probe.weights[i];
        probe.weights[i] = w0 + h;
        let plus = objective(&probe, batch, weight_decay)?;
        probe.weights[i] = w0 - h;
        let minus = objective(&probe, batch, weight_decay)?;
        probe.weights[i] = w0;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
