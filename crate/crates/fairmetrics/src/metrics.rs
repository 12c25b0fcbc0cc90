//! Pure metric kernels: AUROC, Youden threshold search, confusion rates,
//! Pearson correlation, and statistical parity difference.

use crate::MetricError;

/// Chosen decision threshold with its Youden index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoudenChoice {
    /// Scores at or above this value are classified positive.
    pub threshold: f64,
    /// Youden's J = sensitivity + specificity - 1 at the threshold.
    pub j: f64,
    /// True when no threshold beats J = 0, i.e. the scores carry no signal.
    pub degenerate: bool,
}

/// Accuracy and class-conditional rates at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let positives = labels.iter().filter(|&&l| l).count();
    (positives, labels.len() - positives)
}

fn require_both_classes(labels: &[bool]) -> Result<(usize, usize), MetricError> {
    let (positives, negatives) = class_counts(labels);
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

fn require_paired(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    if scores.is_empty() {
        return Err(MetricError::EmptyInput("scores"));
    }
    Ok(())
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) statistic.
///
/// Ties between a positive and a negative score contribute half credit.
/// Errors when only one class is present, since the statistic is undefined.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    require_paired(scores, labels)?;
    let (positives, negatives) = require_both_classes(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average ranks over tied runs, then sum ranks of the positive class.
    let mut rank_sum = 0.0_f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share the average rank.
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if labels[idx] {
                rank_sum += avg_rank;
            }
        }
        start = end;
    }

    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

fn true_false_positive_rates(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    positives: usize,
    negatives: usize,
) -> (f64, f64) {
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= threshold {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp as f64 / positives as f64, fp as f64 / negatives as f64)
}

/// Threshold maximizing Youden's J over midpoints of adjacent unique scores
/// plus the two infinite sentinels (classify-all and classify-none).
///
/// Ties are broken toward the smallest threshold; a best J of zero or less
/// sets the `degenerate` flag so callers can surface uninformative scores.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<YoudenChoice, MetricError> {
    require_paired(scores, labels)?;
    let (positives, negatives) = require_both_classes(labels)?;

    let mut unique: Vec<f64> = scores.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();

    let mut candidates = Vec::with_capacity(unique.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    for pair in unique.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(f64::INFINITY);

    // Ascending candidate order plus strict improvement keeps the smallest
    // threshold among ties.
    let mut best_j = f64::NEG_INFINITY;
    let mut best_threshold = f64::NEG_INFINITY;
    for &threshold in &candidates {
        let (tpr, fpr) = true_false_positive_rates(scores, labels, threshold, positives, negatives);
        let j = tpr - fpr;
        if j > best_j {
            best_j = j;
            best_threshold = threshold;
        }
    }

    Ok(YoudenChoice { threshold: best_threshold, j: best_j, degenerate: best_j <= 0.0 })
}

/// Accuracy, sensitivity, and specificity of the rule "score >= threshold".
pub fn confusion_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<ConfusionMetrics, MetricError> {
    require_paired(scores, labels)?;
    let (positives, negatives) = require_both_classes(labels)?;

    let mut tp = 0usize;
    let mut tn = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        if predicted && l {
            tp += 1;
        } else if !predicted && !l {
            tn += 1;
        }
    }
    Ok(ConfusionMetrics {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        sensitivity: tp as f64 / positives as f64,
        specificity: tn as f64 / negatives as f64,
    })
}

/// Pearson correlation coefficient between two equal-length series.
///
/// Errors on fewer than two points or when either series is constant.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(MetricError::EmptyInput("pearson_r needs at least two points"));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(MetricError::ZeroVariance("first"));
    }
    if var_y == 0.0 {
        return Err(MetricError::ZeroVariance("second"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Statistical parity difference: correct-rate of the flagged (minority)
/// group minus correct-rate of its complement.
///
/// `correct[i]` marks whether prediction cell `i` was right; `minority[i]`
/// marks membership. Both groups must be non-empty.
pub fn statistical_parity_difference(
    correct: &[bool],
    minority: &[bool],
) -> Result<f64, MetricError> {
    if correct.len() != minority.len() {
        return Err(MetricError::LengthMismatch { left: correct.len(), right: minority.len() });
    }
    let mut minority_total = 0usize;
    let mut minority_correct = 0usize;
    let mut majority_total = 0usize;
    let mut majority_correct = 0usize;
    for (&c, &m) in correct.iter().zip(minority) {
        if m {
            minority_total += 1;
            minority_correct += usize::from(c);
        } else {
            majority_total += 1;
            majority_correct += usize::from(c);
        }
    }
    if minority_total == 0 {
        return Err(MetricError::EmptyGroup("minority"));
    }
    if majority_total == 0 {
        return Err(MetricError::EmptyGroup("majority"));
    }
    Ok(minority_correct as f64 / minority_total as f64
        - majority_correct as f64 / majority_total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auroc_hand_case() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert!((auroc(&scores, &labels).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auroc_extremes_and_ties() {
        assert_eq!(auroc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &[false, true, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn auroc_rejects_single_class() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(MetricError::SingleClass { positives: 2, negatives: 0 })
        ));
        assert!(auroc(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn auroc_matches_pair_counting_with_ties() {
        for case in 0..200u64 {
            let mut rng = rngutil::substream(4100, "auroc-brute", case);
            let n = rng.random_range(4..=50);
            // Coarse grid forces plenty of exact ties.
            let scores: Vec<f64> =
                (0..n).map(|_| rng.random_range(0..8) as f64 / 7.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = brute_force_auroc(&scores, &labels);
            assert!((fast - slow).abs() <= 1e-12, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_transforms() {
        let mut rng = rngutil::substream(4101, "auroc-mono", 0);
        for _ in 0..50 {
            let n = rng.random_range(5..=40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let base = auroc(&scores, &labels).unwrap();
            let exp_scores: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let cube_scores: Vec<f64> = scores.iter().map(|s| s.powi(3) + 2.0).collect();
            assert!((auroc(&exp_scores, &labels).unwrap() - base).abs() <= 1e-12);
            assert!((auroc(&cube_scores, &labels).unwrap() - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn youden_hand_case() {
        let choice = youden_threshold(&[0.2, 0.9], &[false, true]).unwrap();
        assert!((choice.threshold - 0.55).abs() < 1e-15);
        assert_eq!(choice.j, 1.0);
        assert!(!choice.degenerate);
    }

    #[test]
    fn youden_anti_correlated_is_degenerate() {
        // Scores point the wrong way: every finite cut has J < 0, so the
        // classify-none sentinel (J = 0) wins and the flag is raised.
        let choice = youden_threshold(&[0.9, 0.1], &[false, true]).unwrap();
        assert_eq!(choice.j, 0.0);
        assert!(choice.degenerate);
        assert_eq!(choice.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn youden_translation_equivariance() {
        let mut rng = rngutil::substream(4102, "youden-shift", 0);
        for _ in 0..30 {
            let n = rng.random_range(4..=30);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let base = youden_threshold(&scores, &labels).unwrap();
            let shift = 3.25;
            let shifted_scores: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let shifted = youden_threshold(&shifted_scores, &labels).unwrap();
            assert!((shifted.j - base.j).abs() <= 1e-12);
            if base.threshold.is_finite() {
                assert!((shifted.threshold - (base.threshold + shift)).abs() <= 1e-9);
            } else {
                assert_eq!(shifted.threshold, base.threshold);
            }
        }
    }

    #[test]
    fn youden_matches_exhaustive_search() {
        let mut rng = rngutil::substream(4103, "youden-brute", 0);
        for _ in 0..100 {
            let n = rng.random_range(4..=40);
            let scores: Vec<f64> =
                (0..n).map(|_| rng.random_range(0..10) as f64 / 9.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let choice = youden_threshold(&scores, &labels).unwrap();

            // Brute force over the same candidate set.
            let mut unique = scores.clone();
            unique.sort_by(f64::total_cmp);
            unique.dedup();
            let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
            for pair in unique.windows(2) {
                candidates.push((pair[0] + pair[1]) / 2.0);
            }
            let mut best = f64::NEG_INFINITY;
            for &t in &candidates {
                let cm = confusion_metrics(&scores, &labels, t).unwrap();
                best = best.max(cm.sensitivity + cm.specificity - 1.0);
            }
            assert!((choice.j - best).abs() <= 1e-12);
            let at_choice = confusion_metrics(&scores, &labels, choice.threshold).unwrap();
            assert!((at_choice.sensitivity + at_choice.specificity - 1.0 - choice.j).abs() <= 1e-12);
        }
    }

    #[test]
    fn confusion_sentinel_thresholds() {
        let scores = [0.2, 0.6, 0.4, 0.9];
        let labels = [false, true, false, true];
        let all_pos = confusion_metrics(&scores, &labels, f64::NEG_INFINITY).unwrap();
        assert_eq!((all_pos.sensitivity, all_pos.specificity), (1.0, 0.0));
        let all_neg = confusion_metrics(&scores, &labels, f64::INFINITY).unwrap();
        assert_eq!((all_neg.sensitivity, all_neg.specificity), (0.0, 1.0));
        assert_eq!(all_pos.accuracy, 0.5);
        assert_eq!(all_neg.accuracy, 0.5);
    }

    #[test]
    fn confusion_hand_counts() {
        // threshold 0.5: predictions [0,1,1,0,1]; labels [0,1,0,1,1]
        // tp=2 (idx 1,4), tn=1 (idx 0), fp=1 (idx 2), fn=1 (idx 3).
        let scores = [0.3, 0.7, 0.5, 0.2, 0.9];
        let labels = [false, true, false, true, true];
        let cm = confusion_metrics(&scores, &labels, 0.5).unwrap();
        assert!((cm.accuracy - 0.6).abs() < 1e-15);
        assert!((cm.sensitivity - 2.0 / 3.0).abs() < 1e-15);
        assert!((cm.specificity - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pearson_hand_cases() {
        let r = pearson_r(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() <= 1e-12);
        let x = [0.5, 1.5, -2.0, 4.0, 0.25];
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson_r(&x, &affine).unwrap() - 1.0).abs() <= 1e-12);
        let negated: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &negated).unwrap() + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pearson_rejects_constant_series() {
        assert!(matches!(
            pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricError::ZeroVariance("first"))
        ));
        assert!(matches!(
            pearson_r(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(MetricError::ZeroVariance("second"))
        ));
    }

    #[test]
    fn parity_difference_hand_case() {
        // Minority: 8 of 10 correct; majority: 9 of 10 correct -> -0.1.
        let mut correct = Vec::new();
        let mut minority = Vec::new();
        for i in 0..10 {
            correct.push(i < 8);
            minority.push(true);
        }
        for i in 0..10 {
            correct.push(i < 9);
            minority.push(false);
        }
        let spd = statistical_parity_difference(&correct, &minority).unwrap();
        assert!((spd + 0.1).abs() <= 1e-12);

        // Swapping group membership flips the sign.
        let flipped: Vec<bool> = minority.iter().map(|m| !m).collect();
        let swapped = statistical_parity_difference(&correct, &flipped).unwrap();
        assert!((spd + swapped).abs() <= 1e-15);
    }

    #[test]
    fn parity_difference_zero_for_equal_rates() {
        // Both groups 1/2 correct -> exactly zero.
        let correct = [true, true, false, false];
        let minority = [true, false, true, false];
        assert_eq!(statistical_parity_difference(&correct, &minority).unwrap(), 0.0);

        // Fully separated rates hit the extremes.
        let c = [true, true, false, false];
        let m = [true, true, false, false];
        assert_eq!(statistical_parity_difference(&c, &m).unwrap(), 1.0);
    }

    #[test]
    fn parity_difference_requires_both_groups() {
        assert!(matches!(
            statistical_parity_difference(&[true, false], &[true, true]),
            Err(MetricError::EmptyGroup("majority"))
        ));
        assert!(matches!(
            statistical_parity_difference(&[true, false], &[false, false]),
            Err(MetricError::EmptyGroup("minority"))
        ));
    }
}
