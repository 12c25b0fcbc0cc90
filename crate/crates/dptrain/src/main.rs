//! Command-line driver for privacy-preserving training experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dptrain::audit::AuditGrouping;
use dptrain::config::{CohortSection, ModelSection, PrivacySection, TrainingSection};
use dptrain::runner::predict_split;
use dptrain::{
    audit_predictions, load_predictions, run_experiment, sweep_epsilon, ExperimentConfig, Mode,
    RunError,
};

#[derive(Parser)]
#[command(
    name = "dptrain",
    version,
    about = "Train, evaluate, and audit differentially private diagnosis models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag overrides applied on top of the config file (or of the defaults).
#[derive(Args, Debug, Default)]
struct Overrides {
    /// "private" or "non-private".
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Load a saved cohort instead of generating one.
    #[arg(long)]
    cohort_path: Option<PathBuf>,
    #[arg(long)]
    n_studies: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    separability: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    cohort_seed: Option<u64>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Four comma-separated stage widths, e.g. 8,8,16,16.
    #[arg(long, value_delimiter = ',')]
    stage_widths: Option<Vec<usize>>,
    #[arg(long)]
    groups: Option<usize>,
    /// "mish" or "relu".
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// true/false; forbidden in private mode.
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    bootstrap_redraws: Option<u64>,
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    target_epsilon: Option<f64>,
    #[arg(long)]
    noise_multiplier: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    target_delta: Option<f64>,
    #[arg(long)]
    sampling_rate: Option<f64>,
}

impl Overrides {
    fn into_config(self, file: Option<&PathBuf>) -> Result<ExperimentConfig, RunError> {
        let mut config = match file {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => {
                let mode = self.mode.as_deref().ok_or_else(|| {
                    RunError::Config("--mode is required when no --config file is given".into())
                })?;
                ExperimentConfig {
                    mode: Mode::parse(mode)?,
                    seed: 0,
                    output_dir: None,
                    cohort: CohortSection::default(),
                    model: ModelSection::default(),
                    training: TrainingSection::default(),
                    privacy: PrivacySection::default(),
                }
            }
        };
        if let Some(mode) = &self.mode {
            config.mode = Mode::parse(mode)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.output_dir.is_some() {
            config.output_dir = self.output_dir;
        }
        if self.cohort_path.is_some() {
            config.cohort.path = self.cohort_path;
        }
        if self.n_studies.is_some() {
            config.cohort.n_studies = self.n_studies;
        }
        if self.image_size.is_some() {
            config.cohort.image_size = self.image_size;
        }
        if self.separability.is_some() {
            config.cohort.separability = self.separability;
        }
        if self.train_fraction.is_some() {
            config.cohort.train_fraction = self.train_fraction;
        }
        if self.cohort_seed.is_some() {
            config.cohort.seed = self.cohort_seed;
        }
        if self.input_size.is_some() {
            config.model.input_size = self.input_size;
        }
        if let Some(widths) = self.stage_widths {
            let widths: [usize; 4] = widths.try_into().map_err(|v: Vec<usize>| {
                RunError::Config(format!("--stage-widths needs 4 values, got {}", v.len()))
            })?;
            config.model.stage_widths = Some(widths);
        }
        if self.groups.is_some() {
            config.model.groups = self.groups;
        }
        if self.activation.is_some() {
            config.model.activation = self.activation;
        }
        if self.learning_rate.is_some() {
            config.training.learning_rate = self.learning_rate;
        }
        if self.epochs.is_some() {
            config.training.epochs = self.epochs;
        }
        if self.batch_size.is_some() {
            config.training.batch_size = self.batch_size;
        }
        if self.augment.is_some() {
            config.training.augment = self.augment;
        }
        if self.bootstrap_redraws.is_some() {
            config.training.bootstrap_redraws = self.bootstrap_redraws;
        }
        if self.init_checkpoint.is_some() {
            config.training.init_checkpoint = self.init_checkpoint;
        }
        if self.target_epsilon.is_some() {
            config.privacy.target_epsilon = self.target_epsilon;
        }
        if self.noise_multiplier.is_some() {
            config.privacy.noise_multiplier = self.noise_multiplier;
        }
        if self.clip_norm.is_some() {
            config.privacy.clip_norm = self.clip_norm;
        }
        if self.target_delta.is_some() {
            config.privacy.target_delta = self.target_delta;
        }
        if self.sampling_rate.is_some() {
            config.privacy.sampling_rate = self.sampling_rate;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Find the noise multiplier achieving a target privacy budget.
    Calibrate {
        #[arg(long)]
        target_epsilon: f64,
        #[arg(long, default_value_t = 8e-4)]
        sampling_rate: f64,
        #[arg(long, default_value_t = 187_500)]
        steps: u64,
        #[arg(long, default_value_t = 6e-6)]
        target_delta: f64,
    },
    /// Generate a synthetic cohort and save it as PGM files plus metadata.
    GenerateCohort {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_studies: usize,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        separability: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one experiment: train, evaluate, and write reports.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a saved cohort's test split with a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split seed; defaults to the checkpoint's master seed.
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long, default_value_t = 0.794)]
        train_fraction: f64,
        #[arg(long, default_value_t = 1000)]
        bootstrap_redraws: u64,
    },
    /// Fairness audit of a predictions file.
    Audit {
        #[arg(long)]
        predictions: PathBuf,
        /// "age", "sex", or "both".
        #[arg(long, default_value = "both")]
        grouping: String,
        /// Output directory; defaults to the predictions file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One calibrated private run per ε target plus a trend CSV.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated ε targets, e.g. 0.5,2,8.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Calibrate { target_epsilon, sampling_rate, steps, target_delta } => {
            let noise =
                accountant::calibrate_sigma(target_epsilon, sampling_rate, steps, target_delta)?;
            println!(
                "{}",
                serde_json::json!({
                    "target_epsilon": target_epsilon,
                    "sampling_rate": sampling_rate,
                    "steps": steps,
                    "target_delta": target_delta,
                    "noise_multiplier": noise.sigma,
                    "achieved_epsilon": noise.achieved.epsilon,
                    "best_order": noise.best_order,
                })
            );
            Ok(())
        }
        Command::GenerateCohort { out, n_studies, image_size, separability, seed } => {
            let mut spec = datapipe::CohortSpec::standard(n_studies, seed);
            if let Some(size) = image_size {
                spec.image_size = size;
            }
            if let Some(sep) = separability {
                spec.separability = sep;
            }
            spec.validate()?;
            let cohort = datapipe::generate_cohort(&spec)?;
            datapipe::save_cohort(&cohort, &out)?;
            println!("wrote {} studies to {}", cohort.len(), out.display());
            Ok(())
        }
        Command::Train { config, overrides } => {
            let config = overrides.into_config(config.as_ref())?;
            let outcome = run_experiment(&config)?;
            println!(
                "run complete: {} steps, mean AUROC {:.4}{}; artifacts in {}",
                outcome.manifest.steps_completed,
                outcome.metrics.average_auroc.value,
                outcome
                    .manifest
                    .achieved_epsilon
                    .map_or(String::new(), |e| format!(", achieved epsilon {e:.4}")),
                outcome.output_dir.display(),
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            cohort,
            out,
            split_seed,
            train_fraction,
            bootstrap_redraws,
        } => {
            let (model, manifest) = nncore::load_checkpoint(&checkpoint, None)?;
            let data = datapipe::load_cohort(&cohort)?;
            let seed = split_seed.unwrap_or(manifest.master_seed);
            let split = datapipe::split_patientwise(&data, train_fraction, seed);
            let predictions = predict_split(&model, &data, &split.test)?;
            let metrics =
                fairmetrics::compute_metric_report(&predictions, bootstrap_redraws, seed)?;
            std::fs::create_dir_all(&out)?;
            let tag = format!("# checkpoint {}\n", manifest.config_hash);
            std::fs::write(out.join("metrics.csv"), format!("{tag}{}", metrics.to_csv()))?;
            std::fs::write(out.join("metrics.json"), metrics.to_json())?;
            println!(
                "evaluated {} test studies: mean AUROC {:.4}; reports in {}",
                split.test.len(),
                metrics.average_auroc.value,
                out.display(),
            );
            Ok(())
        }
        Command::Audit { predictions, grouping, out } => {
            let grouping = AuditGrouping::parse(&grouping)?;
            let (set, manifest_hash) = load_predictions(&predictions)?;
            let out_dir = out.unwrap_or_else(|| {
                predictions.parent().map_or_else(|| PathBuf::from("."), PathBuf::from)
            });
            let output =
                audit_predictions(&set, manifest_hash.as_deref(), grouping, &out_dir)?;
            println!(
                "audited {} predictions; wrote {} files to {}",
                set.len(),
                output.files.len(),
                out_dir.display(),
            );
            Ok(())
        }
        Command::Sweep { config, targets, overrides } => {
            let config = overrides.into_config(config.as_ref())?;
            let outcome = sweep_epsilon(&config, &targets)?;
            for row in &outcome.rows {
                println!(
                    "epsilon {}: {}",
                    row.target_epsilon,
                    if row.status == "ok" {
                        format!(
                            "mean AUROC {:.4} (achieved epsilon {:.4})",
                            row.mean_auroc.unwrap_or(f64::NAN),
                            row.achieved_epsilon.unwrap_or(f64::NAN),
                        )
                    } else {
                        row.status.clone()
                    }
                );
            }
            println!("trend written to {}", outcome.trend_file.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
