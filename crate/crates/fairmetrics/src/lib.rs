//! Utility and fairness metrics for multi-label classifiers.
//!
//! Pure metric kernels (AUROC, Youden threshold selection, confusion-matrix
//! rates, Pearson correlation, statistical parity difference) plus a
//! deterministic nonparametric bootstrap and report builders that aggregate
//! per-label utility and per-subgroup fairness summaries into serializable
//! tables.

mod bootstrap;
mod metrics;
mod report;

pub use bootstrap::{
    bootstrap, bootstrap_vector, BootstrapSummary, VectorBootstrap, DEFAULT_REDRAWS,
};
pub use metrics::{
    auroc, confusion_metrics, pearson_r, statistical_parity_difference, youden_threshold,
    ConfusionMetrics, YoudenChoice,
};
pub use report::{
    compute_metric_report, subgroup_report, FairnessReport, Grouping, LabelMetrics, MetricReport,
    MetricWithSpread, PredictionSet, SubgroupEntry, NUM_LABELS,
};

use thiserror::Error;

/// Errors raised by metric computation, bootstrapping, or report assembly.
#[derive(Debug, Error)]
pub enum MetricError {
    /// A rank or rate statistic needs both classes present.
    #[error("metric undefined: {positives} positive and {negatives} negative labels")]
    SingleClass { positives: usize, negatives: usize },
    /// Inputs that must be paired had different lengths.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    /// A statistic over an empty collection was requested.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    /// Pearson correlation is undefined when either series is constant.
    #[error("zero variance in {0} series")]
    ZeroVariance(&'static str),
    /// Parity comparison needs members on both sides.
    #[error("empty {0} group in parity comparison")]
    EmptyGroup(&'static str),
    /// A score was outside [0, 1] or not finite.
    #[error("invalid score {value} at row {row}, label {label}")]
    InvalidScore { row: usize, label: usize, value: f64 },
    /// Too many bootstrap resamples left the metric undefined.
    #[error("bootstrap unstable: {rejected} of {attempts} resamples undefined (limit 50%)")]
    BootstrapUnstable { rejected: u64, attempts: u64 },
    /// Subgroup analysis needs at least two non-empty groups.
    #[error("only one non-empty subgroup ({0}); no complement to compare against")]
    SingleSubgroup(String),
}
