//! Per-label utility reports and per-subgroup fairness reports.

use datapipe::{AgeBin, Sex, SubgroupKey, LABEL_NAMES};
use serde::Serialize;

use crate::bootstrap::bootstrap_vector;
use crate::metrics::{auroc, confusion_metrics, statistical_parity_difference, youden_threshold};
use crate::MetricError;

/// Number of findings scored per study.
pub const NUM_LABELS: usize = 8;

/// Model outputs, ground truth, and demographics for one evaluation split.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    scores: Vec<[f64; NUM_LABELS]>,
    targets: Vec<[bool; NUM_LABELS]>,
    subgroups: Vec<SubgroupKey>,
}

impl PredictionSet {
    /// Validates that rows align and every score is a probability in [0, 1].
    pub fn new(
        scores: Vec<[f64; NUM_LABELS]>,
        targets: Vec<[bool; NUM_LABELS]>,
        subgroups: Vec<SubgroupKey>,
    ) -> Result<Self, MetricError> {
        if scores.len() != targets.len() {
            return Err(MetricError::LengthMismatch { left: scores.len(), right: targets.len() });
        }
        if scores.len() != subgroups.len() {
            return Err(MetricError::LengthMismatch { left: scores.len(), right: subgroups.len() });
        }
        if scores.is_empty() {
            return Err(MetricError::EmptyInput("prediction rows"));
        }
        for (row, row_scores) in scores.iter().enumerate() {
            for (label, &value) in row_scores.iter().enumerate() {
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(MetricError::InvalidScore { row, label, value });
                }
            }
        }
        Ok(Self { scores, targets, subgroups })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[[f64; NUM_LABELS]] {
        &self.scores
    }

    pub fn targets(&self) -> &[[bool; NUM_LABELS]] {
        &self.targets
    }

    pub fn subgroups(&self) -> &[SubgroupKey] {
        &self.subgroups
    }

    fn label_column(&self, label: usize) -> (Vec<f64>, Vec<bool>) {
        let scores = self.scores.iter().map(|row| row[label]).collect();
        let targets = self.targets.iter().map(|row| row[label]).collect();
        (scores, targets)
    }

    fn label_column_at(&self, label: usize, rows: &[usize]) -> (Vec<f64>, Vec<bool>) {
        let scores = rows.iter().map(|&r| self.scores[r][label]).collect();
        let targets = rows.iter().map(|&r| self.targets[r][label]).collect();
        (scores, targets)
    }
}

/// Point estimate plus bootstrap mean and spread.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricWithSpread {
    /// Value on the full evaluation split.
    pub value: f64,
    /// Mean over bootstrap redraws.
    pub mean: f64,
    /// Population standard deviation over bootstrap redraws.
    pub spread: f64,
}

/// Utility metrics for one finding.
#[derive(Debug, Clone, Serialize)]
pub struct LabelMetrics {
    pub label: String,
    pub auroc: MetricWithSpread,
    pub accuracy: MetricWithSpread,
    pub sensitivity: MetricWithSpread,
    pub specificity: MetricWithSpread,
    /// Operating point maximizing Youden's J on the full split.
    pub threshold: f64,
    /// True when no threshold beat J = 0 for this label.
    pub degenerate_threshold: bool,
}

/// Per-label utility grid plus the across-label average row.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub per_label: Vec<LabelMetrics>,
    pub average_auroc: MetricWithSpread,
    pub average_accuracy: MetricWithSpread,
    pub average_sensitivity: MetricWithSpread,
    pub average_specificity: MetricWithSpread,
    pub redraws: u64,
    /// Bootstrap resamples rejected because some label lost a class.
    pub rejected_redraws: u64,
}

const METRICS_PER_LABEL: usize = 4;

/// Computes per-label AUROC, accuracy, sensitivity, and specificity with
/// joint bootstrap intervals.
///
/// Thresholds are fit once per label on the full split and held fixed across
/// bootstrap redraws, so the spread reflects sampling noise at a fixed
/// operating point. Rows are resampled jointly across all labels; a redraw
/// is rejected when any label becomes single-class.
pub fn compute_metric_report(
    predictions: &PredictionSet,
    redraws: u64,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    let mut thresholds = [0.0f64; NUM_LABELS];
    let mut degenerate = [false; NUM_LABELS];
    let mut point = [[0.0f64; METRICS_PER_LABEL]; NUM_LABELS];
    for label in 0..NUM_LABELS {
        let (scores, targets) = predictions.label_column(label);
        let choice = youden_threshold(&scores, &targets)?;
        thresholds[label] = choice.threshold;
        degenerate[label] = choice.degenerate;
        let cm = confusion_metrics(&scores, &targets, choice.threshold)?;
        point[label] = [
            auroc(&scores, &targets)?,
            cm.accuracy,
            cm.sensitivity,
            cm.specificity,
        ];
    }

    // One bootstrap statistic vector: four metrics per label, then the four
    // across-label averages from the same resample.
    let dims = NUM_LABELS * METRICS_PER_LABEL + METRICS_PER_LABEL;
    let resampled = bootstrap_vector(predictions.len(), redraws, seed, |rows| {
        let mut values = Vec::with_capacity(dims);
        let mut sums = [0.0f64; METRICS_PER_LABEL];
        for label in 0..NUM_LABELS {
            let (scores, targets) = predictions.label_column_at(label, rows);
            let auc = auroc(&scores, &targets).ok()?;
            let cm = confusion_metrics(&scores, &targets, thresholds[label]).ok()?;
            let row = [auc, cm.accuracy, cm.sensitivity, cm.specificity];
            values.extend_from_slice(&row);
            for (sum, v) in sums.iter_mut().zip(row) {
                *sum += v;
            }
        }
        for sum in sums {
            values.push(sum / NUM_LABELS as f64);
        }
        Some(values)
    })?;

    let spread_at = |component: usize, value: f64| MetricWithSpread {
        value,
        mean: resampled.means[component],
        spread: resampled.spreads[component],
    };

    let mut per_label = Vec::with_capacity(NUM_LABELS);
    for label in 0..NUM_LABELS {
        let base = label * METRICS_PER_LABEL;
        per_label.push(LabelMetrics {
            label: LABEL_NAMES[label].to_string(),
            auroc: spread_at(base, point[label][0]),
            accuracy: spread_at(base + 1, point[label][1]),
            sensitivity: spread_at(base + 2, point[label][2]),
            specificity: spread_at(base + 3, point[label][3]),
            threshold: thresholds[label],
            degenerate_threshold: degenerate[label],
        });
    }

    let avg_point = |metric: usize| {
        point.iter().map(|row| row[metric]).sum::<f64>() / NUM_LABELS as f64
    };
    let avg_base = NUM_LABELS * METRICS_PER_LABEL;
    Ok(MetricReport {
        per_label,
        average_auroc: spread_at(avg_base, avg_point(0)),
        average_accuracy: spread_at(avg_base + 1, avg_point(1)),
        average_sensitivity: spread_at(avg_base + 2, avg_point(2)),
        average_specificity: spread_at(avg_base + 3, avg_point(3)),
        redraws: resampled.accepted,
        rejected_redraws: resampled.rejected,
    })
}

impl MetricReport {
    /// Tidy CSV: one row per label plus an `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,auroc,auroc_spread,accuracy,accuracy_spread,sensitivity,sensitivity_spread,\
             specificity,specificity_spread,threshold,degenerate_threshold\n",
        );
        for lm in &self.per_label {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                lm.label,
                lm.auroc.value,
                lm.auroc.spread,
                lm.accuracy.value,
                lm.accuracy.spread,
                lm.sensitivity.value,
                lm.sensitivity.spread,
                lm.specificity.value,
                lm.specificity.spread,
                lm.threshold,
                lm.degenerate_threshold,
            ));
        }
        out.push_str(&format!(
            "average,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},,\n",
            self.average_auroc.value,
            self.average_auroc.spread,
            self.average_accuracy.value,
            self.average_accuracy.spread,
            self.average_sensitivity.value,
            self.average_sensitivity.spread,
            self.average_specificity.value,
            self.average_specificity.spread,
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Demographic axis along which the test split is audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    AgeBins,
    Sex,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::AgeBins => "age",
            Grouping::Sex => "sex",
        }
    }

    fn group_names(self) -> Vec<&'static str> {
        match self {
            Grouping::AgeBins => AgeBin::ALL.iter().map(|b| b.as_str()).collect(),
            Grouping::Sex => vec![Sex::Female.as_str(), Sex::Male.as_str()],
        }
    }

    fn member(self, key: &SubgroupKey, name: &str) -> bool {
        match self {
            Grouping::AgeBins => key.age_bin.as_str() == name,
            Grouping::Sex => key.sex.as_str() == name,
        }
    }
}

/// Fairness summary for one subgroup.
#[derive(Debug, Clone, Serialize)]
pub struct SubgroupEntry {
    pub name: String,
    /// Number of evaluation rows in the subgroup.
    pub n: usize,
    /// Mean of the per-label AUROCs computed within the subgroup.
    pub mean_auroc: Option<f64>,
    /// Population standard deviation across those per-label AUROCs.
    pub std_auroc: Option<f64>,
    /// Correct-classification rate of this subgroup minus its complement.
    pub parity_difference: f64,
    /// Labels single-class within the subgroup, excluded from the AUROC mean.
    pub missing_labels: Vec<String>,
}

/// Subgroup audit along one demographic axis.
#[derive(Debug, Clone, Serialize)]
pub struct FairnessReport {
    pub grouping: String,
    /// Per-label operating points fit on the full split.
    pub thresholds: Vec<f64>,
    pub entries: Vec<SubgroupEntry>,
    /// Expected subgroups with no members in the split.
    pub missing_groups: Vec<String>,
}

/// Audits the predictions along `grouping`.
///
/// Decision thresholds are fit per label on the full split (never per
/// subgroup) and reused for every group's correctness cells. Each entry
/// compares a subgroup against the union of all other rows. Expected
/// subgroups with no members are reported as missing; if fewer than two
/// groups have members there is nothing to compare and an error is raised.
pub fn subgroup_report(
    predictions: &PredictionSet,
    grouping: Grouping,
) -> Result<FairnessReport, MetricError> {
    let mut thresholds = Vec::with_capacity(NUM_LABELS);
    for label in 0..NUM_LABELS {
        let (scores, targets) = predictions.label_column(label);
        thresholds.push(youden_threshold(&scores, &targets)?.threshold);
    }

    // One correctness cell per (row, label) at the shared operating points.
    let mut correct = Vec::with_capacity(predictions.len() * NUM_LABELS);
    for (row_scores, row_targets) in predictions.scores.iter().zip(&predictions.targets) {
        for label in 0..NUM_LABELS {
            let predicted = row_scores[label] >= thresholds[label];
            correct.push(predicted == row_targets[label]);
        }
    }

    let names = grouping.group_names();
    let memberships: Vec<Vec<usize>> = names
        .iter()
        .map(|name| {
            (0..predictions.len())
                .filter(|&row| grouping.member(&predictions.subgroups[row], name))
                .collect()
        })
        .collect();

    let populated = memberships.iter().filter(|rows| !rows.is_empty()).count();
    if populated < 2 {
        let only = names
            .iter()
            .zip(&memberships)
            .find(|(_, rows)| !rows.is_empty())
            .map(|(name, _)| name.to_string())
            .unwrap_or_else(|| "none".to_string());
        return Err(MetricError::SingleSubgroup(only));
    }

    let mut entries = Vec::new();
    let mut missing_groups = Vec::new();
    for (name, rows) in names.iter().zip(&memberships) {
        if rows.is_empty() {
            missing_groups.push(name.to_string());
            continue;
        }

        let mut aurocs = Vec::with_capacity(NUM_LABELS);
        let mut missing_labels = Vec::new();
        for label in 0..NUM_LABELS {
            let (scores, targets) = predictions.label_column_at(label, rows);
            match auroc(&scores, &targets) {
                Ok(value) => aurocs.push(value),
                Err(MetricError::SingleClass { .. }) => {
                    missing_labels.push(LABEL_NAMES[label].to_string());
                }
                Err(other) => return Err(other),
            }
        }
        let (mean_auroc, std_auroc) = if aurocs.is_empty() {
            (None, None)
        } else {
            let n = aurocs.len() as f64;
            let mean = aurocs.iter().sum::<f64>() / n;
            let var = aurocs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            (Some(mean), Some(var.sqrt()))
        };

        let mut in_group = vec![false; correct.len()];
        for &row in rows {
            for label in 0..NUM_LABELS {
                in_group[row * NUM_LABELS + label] = true;
            }
        }
        let parity_difference = statistical_parity_difference(&correct, &in_group)?;

        entries.push(SubgroupEntry {
            name: name.to_string(),
            n: rows.len(),
            mean_auroc,
            std_auroc,
            parity_difference,
            missing_labels,
        });
    }

    Ok(FairnessReport {
        grouping: grouping.as_str().to_string(),
        thresholds,
        entries,
        missing_groups,
    })
}

impl FairnessReport {
    /// Tidy CSV: one row per subgroup; empty groups appear with n = 0.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("subgroup,n,mean_auroc,std_auroc,parity_difference,missing_labels\n");
        for entry in &self.entries {
            let mean = entry.mean_auroc.map_or(String::new(), |v| format!("{v:.6}"));
            let std = entry.std_auroc.map_or(String::new(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "{},{},{},{},{:.6},{}\n",
                entry.name,
                entry.n,
                mean,
                std,
                entry.parity_difference,
                entry.missing_labels.join(";"),
            ));
        }
        for name in &self.missing_groups {
            out.push_str(&format!("{name},0,,,,\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
