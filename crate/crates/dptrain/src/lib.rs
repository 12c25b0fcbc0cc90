//! End-to-end experiment orchestration: cohort generation or ingestion, noise
//! calibration, private (DP-SGD) and non-private training, evaluation,
//! fairness auditing, ε sweeps, and artifact emission (reports, predictions,
//! checkpoints, manifests).

pub mod audit;
pub mod config;
pub mod runner;
pub mod sweep;

pub use audit::{audit_predictions, load_predictions, AuditOutput};
pub use config::{
    resolve, CohortSource, ExperimentConfig, Mode, ResolvedConfig, OUTPUT_ROOT_ENV,
};
pub use runner::{run_experiment, RunManifest, RunOutcome};
pub use sweep::{sweep_epsilon, SweepOutcome, SweepRow};

use thiserror::Error;

/// Anything that can stop an experiment, tagged for process exit codes.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("privacy budget exceeded at step {step}: spent ε = {spent:.6} > target {target:.6}")]
    BudgetExceeded { step: u64, spent: f64, target: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("accounting: {0}")]
    Accounting(#[from] accountant::AccountantError),
    #[error("data: {0}")]
    Data(#[from] datapipe::DataError),
}

impl From<nncore::NnError> for RunError {
    fn from(e: nncore::NnError) -> Self {
        RunError::Numeric(e.to_string())
    }
}

impl From<dpsgd::DpSgdError> for RunError {
    fn from(e: dpsgd::DpSgdError) -> Self {
        RunError::Numeric(e.to_string())
    }
}

impl From<fairmetrics::MetricError> for RunError {
    fn from(e: fairmetrics::MetricError) -> Self {
        RunError::Numeric(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Numeric(format!("serialization: {e}"))
    }
}

impl RunError {
    /// Process exit code: 2 config, 3 budget violation, 4 numeric, 1 other.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Data(_) | RunError::Accounting(_) => 2,
            RunError::BudgetExceeded { .. } => 3,
            RunError::Numeric(_) => 4,
            RunError::Io(_) => 1,
        }
    }
}
