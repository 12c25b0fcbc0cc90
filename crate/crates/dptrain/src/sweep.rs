//! Privacy-budget sweeps: one calibrated run per ε target plus a trend CSV.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use crate::config::Mode;
use crate::runner::run_experiment;
use crate::{resolve, ExperimentConfig, RunError};

/// One line of the sweep trend table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub target_epsilon: f64,
    pub achieved_epsilon: Option<f64>,
    pub mean_auroc: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub mean_specificity: Option<f64>,
    /// "ok" or the failure message (commas stripped for CSV safety).
    pub status: String,
}

/// Results of a sweep: per-target rows in ascending ε order.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub output_dir: PathBuf,
    pub trend_file: PathBuf,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// Runs one calibrated private experiment per target, ascending. Individual
/// run failures are recorded in the trend table and do not stop the sweep.
pub fn sweep_epsilon(
    base: &ExperimentConfig,
    targets: &[f64],
) -> Result<SweepOutcome, RunError> {
    if base.mode != Mode::Private {
        return Err(RunError::Config("sweep requires a private-mode base config".into()));
    }
    if targets.is_empty() {
        return Err(RunError::Config("sweep needs at least one epsilon target".into()));
    }
    for &t in targets {
        if !(t > 0.0 && t.is_finite()) {
            return Err(RunError::Config(format!("epsilon target {t} must be positive")));
        }
    }
    let mut ordered = targets.to_vec();
    ordered.sort_by(f64::total_cmp);
    ordered.dedup();

    // Validate the base before spending any training time; per-target runs
    // re-resolve with the target substituted.
    let mut probe = base.clone();
    probe.privacy.target_epsilon = Some(ordered[0]);
    probe.privacy.noise_multiplier = None;
    let resolved_probe = resolve(&probe)?;
    let sweep_dir = match &base.output_dir {
        Some(dir) => dir.clone(),
        None => resolved_probe
            .output_dir
            .with_file_name(format!("{}-seed{}-sweep", base.mode.as_str(), base.seed)),
    };
    fs::create_dir_all(&sweep_dir)?;

    let mut rows = Vec::with_capacity(ordered.len());
    for &target in &ordered {
        let mut config = base.clone();
        config.privacy.target_epsilon = Some(target);
        config.privacy.noise_multiplier = None;
        config.output_dir = Some(sweep_dir.join(format!("eps-{target}")));
        match run_experiment(&config) {
            Ok(outcome) => rows.push(SweepRow {
                target_epsilon: target,
                achieved_epsilon: outcome.manifest.achieved_epsilon,
                mean_auroc: Some(outcome.metrics.average_auroc.value),
                mean_accuracy: Some(outcome.metrics.average_accuracy.value),
                mean_sensitivity: Some(outcome.metrics.average_sensitivity.value),
                mean_specificity: Some(outcome.metrics.average_specificity.value),
                status: "ok".to_string(),
            }),
            Err(e) => rows.push(SweepRow {
                target_epsilon: target,
                achieved_epsilon: None,
                mean_auroc: None,
                mean_accuracy: None,
                mean_sensitivity: None,
                mean_specificity: None,
                status: e.to_string().replace(',', ";"),
            }),
        }
    }

    // AUROC is the metric the trend is read on; the others are context.
    let mut trend = String::from("# primary_metric auroc\n");
    trend.push_str(
        "epsilon,achieved_epsilon,mean_auroc,mean_accuracy,mean_sensitivity,\
         mean_specificity,status\n",
    );
    for row in &rows {
        trend.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.target_epsilon,
            opt_cell(row.achieved_epsilon),
            opt_cell(row.mean_auroc),
            opt_cell(row.mean_accuracy),
            opt_cell(row.mean_sensitivity),
            opt_cell(row.mean_specificity),
            row.status,
        ));
    }
    let trend_file = sweep_dir.join("trend.csv");
    fs::write(&trend_file, trend)?;

    Ok(SweepOutcome { rows, output_dir: sweep_dir, trend_file })
}
