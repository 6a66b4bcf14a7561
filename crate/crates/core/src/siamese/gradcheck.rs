//! Central finite-difference check of the analytic gradients.

use serde::Serialize;

use super::train::{loss_and_gradients, mean_loss, PairInput};
use super::{SiameseError, SiameseModel};
use crate::embeddings::EncodedSeq;

/// Gradients smaller than this are compared on an absolute scale, since
/// rounding in the loss dominates their finite-difference estimate.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_group: &'static str,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares every trainable weight's analytic gradient of the mean loss over
/// `pairs` with `(L(w + eps) - L(w - eps)) / 2 eps`.
///
/// The error for one weight is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    model: &SiameseModel,
    encodings: &[EncodedSeq],
    pairs: &[PairInput],
    epsilon: f64,
) -> Result<GradCheckReport, SiameseError> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(SiameseError::InvalidSpec(format!(
            "epsilon must lie in (0, 0.01], got {epsilon}"
        )));
    }
    if pairs.is_empty() {
        return Err(SiameseError::NoPairs);
    }
    let (_, grads) = loss_and_gradients(model, encodings, pairs)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_group: "",
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let names: Vec<&'static str> = model.param_groups().iter().map(|(n, _)| *n).collect();
    for (k, name) in names.into_iter().enumerate() {
        for i in 0..grads.groups[k].len() {
            let original = probe.param_groups()[k].1[i];
            probe.param_groups_mut()[k].1[i] = original + epsilon;
            let up = mean_loss(&probe, encodings, pairs)?;
            probe.param_groups_mut()[k].1[i] = original - epsilon;
            let down = mean_loss(&probe, encodings, pairs)?;
            probe.param_groups_mut()[k].1[i] = original;

            let numeric = (up - down) / (2.0 * epsilon);
            let analytic = grads.groups[k][i];
            let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            let err = (analytic - numeric).abs() / scale;
            report.checked += 1;
            if err > report.max_relative_error || report.worst_group.is_empty() {
                report = GradCheckReport {
                    max_relative_error: err,
                    worst_group: name,
                    worst_index: i,
                    analytic,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}

/// Analytic gradients by group name, for inspection in tests.
pub fn analytic_gradients(
    model: &SiameseModel,
    encodings: &[EncodedSeq],
    pairs: &[PairInput],
) -> Result<Vec<(&'static str, Vec<f64>)>, SiameseError> {
    let (_, grads) = loss_and_gradients(model, encodings, pairs)?;
    Ok(model
        .param_groups()
        .iter()
        .map(|(n, _)| *n)
        .zip(grads.groups)
        .collect())
}
