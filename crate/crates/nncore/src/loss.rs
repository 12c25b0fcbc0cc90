//! Weighted binary cross-entropy over multi-label sigmoid outputs.

use crate::NnError;

/// Probabilities are clamped to [CLAMP, 1−CLAMP] before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn check_weights(pos_weights: &[f64]) -> Result<(), NnError> {
    for (index, &w) in pos_weights.iter().enumerate() {
        if !(w > 0.0 && w.is_finite()) {
            return Err(NnError::InvalidWeight { index, value: w });
        }
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Loss for one sample: mean over labels of −[w·y·ln p + (1−y)·ln(1−p)].
pub fn weighted_bce_sample(
    probabilities: &[f64],
    targets: &[f64],
    pos_weights: &[f64],
) -> Result<f64, NnError> {
    if probabilities.len() != targets.len() || probabilities.len() != pos_weights.len() {
        return Err(NnError::ShapeMismatch(format!(
            "loss needs equal label counts, got {} probabilities, {} targets, {} weights",
            probabilities.len(),
            targets.len(),
            pos_weights.len()
        )));
    }
    check_weights(pos_weights)?;
    let k = probabilities.len() as f64;
    let mut total = 0.0;
    for ((&p, &y), &w) in probabilities.iter().zip(targets).zip(pos_weights) {
        let p = clamp_prob(p);
        total += -(w * y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    Ok(total / k)
}

/// Batch loss: returns (mean over samples, per-sample losses).
pub fn weighted_bce(
    probabilities: &[Vec<f64>],
    targets: &[Vec<f64>],
    pos_weights: &[f64],
) -> Result<(f64, Vec<f64>), NnError> {
    if probabilities.len() != targets.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} probability rows vs {} target rows",
            probabilities.len(),
            targets.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(NnError::ShapeMismatch("loss over an empty batch".into()));
    }
    let mut per_sample = Vec::with_capacity(probabilities.len());
    for (p, t) in probabilities.iter().zip(targets) {
        per_sample.push(weighted_bce_sample(p, t, pos_weights)?);
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((mean, per_sample))
}

/// Gradient of one sample's loss w.r.t. its logits z (where p = sigmoid(z)):
/// dL/dz_k = (−w_k·y_k·(1−p_k) + (1−y_k)·p_k) / K.
pub(crate) fn bce_logit_gradient(
    probabilities: &[f64],
    targets: &[f64],
    pos_weights: &[f64],
) -> Vec<f64> {
    let k = probabilities.len() as f64;
    probabilities
        .iter()
        .zip(targets)
        .zip(pos_weights)
        .map(|((&p, &y), &w)| {
            let p = clamp_prob(p);
            (-w * y * (1.0 - p) + (1.0 - y) * p) / k
        })
        .collect()
}
