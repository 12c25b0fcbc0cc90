//! Experiment configuration: TOML file, flag overrides, and resolution of
//! mode-dependent defaults into a fully explicit run plan.

use std::path::{Path, PathBuf};

use datapipe::CohortSpec;
use nncore::{Activation, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::RunError;

/// Environment variable naming the root directory for run outputs.
pub const OUTPUT_ROOT_ENV: &str = "DPTRAIN_OUT";

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Private,
    NonPrivate,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Private => "private",
            Mode::NonPrivate => "non-private",
        }
    }

    pub fn parse(s: &str) -> Result<Self, RunError> {
        match s {
            "private" => Ok(Mode::Private),
            "non-private" => Ok(Mode::NonPrivate),
            other => Err(RunError::Config(format!(
                "unknown mode {other:?}; expected \"private\" or \"non-private\""
            ))),
        }
    }
}

/// Where the cohort comes from: a directory on disk or the generator.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    /// Load from this directory instead of generating.
    pub path: Option<PathBuf>,
    pub n_studies: Option<usize>,
    pub image_size: Option<usize>,
    pub separability: Option<f64>,
    pub train_fraction: Option<f64>,
    /// Generator seed; defaults to the experiment seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Network input side; images are resized when it differs from the
    /// cohort's. Defaults to the cohort image size.
    pub input_size: Option<usize>,
    pub stage_widths: Option<[usize; 4]>,
    pub groups: Option<usize>,
    /// "mish" or "relu"; defaults to mish in private mode, relu otherwise.
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Defaults to 5e-4 in private mode, 5e-5 in non-private mode.
    pub learning_rate: Option<f64>,
    /// Defaults to 150 in private mode and the desk-scale 20 otherwise.
    pub epochs: Option<u64>,
    /// Non-private minibatch size; defaults to 128.
    pub batch_size: Option<usize>,
    /// Random rotation/flip; defaults to true in non-private mode and is
    /// forbidden in private mode.
    pub augment: Option<bool>,
    /// Bootstrap redraws for evaluation intervals; defaults to 1000.
    pub bootstrap_redraws: Option<u64>,
    /// Warm-start weights from this checkpoint instead of random init.
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacySection {
    /// When set, σ is calibrated so the run's ε lands within 0.1% under it.
    pub target_epsilon: Option<f64>,
    /// Explicit σ; required when no target ε is given.
    pub noise_multiplier: Option<f64>,
    pub clip_norm: Option<f64>,
    pub target_delta: Option<f64>,
    /// Poisson inclusion probability; defaults to batch_size / n_train.
    pub sampling_rate: Option<f64>,
}

/// An experiment as written by the user: mode, seed, and optional sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub cohort: CohortSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub privacy: PrivacySection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(format!("config parse error: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// A private-mode baseline used by tests and `sweep`.
    pub fn private_default(seed: u64) -> Self {
        Self {
            mode: Mode::Private,
            seed,
            output_dir: None,
            cohort: CohortSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            privacy: PrivacySection::default(),
        }
    }
}

/// Cohort provenance recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CohortSource {
    Generated(CohortSpec),
    Loaded { path: PathBuf, train_fraction: f64, split_seed: u64 },
}

/// Privacy parameters with every default filled in. σ may still be pending
/// calibration (when `target_epsilon` is set and `noise_multiplier` empty).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacyPlan {
    pub target_epsilon: Option<f64>,
    pub noise_multiplier: Option<f64>,
    pub clip_norm: f64,
    pub target_delta: f64,
    /// None defers to batch_size / n_train once the split is known.
    pub sampling_rate: Option<f64>,
}

/// A fully explicit experiment: all mode-dependent defaults applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cohort: CohortSource,
    pub model_input_size: Option<usize>,
    pub stage_widths: [usize; 4],
    pub groups: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub augment: bool,
    pub bootstrap_redraws: u64,
    pub init_checkpoint: Option<PathBuf>,
    pub privacy: Option<PrivacyPlan>,
}

fn parse_activation(name: &str) -> Result<Activation, RunError> {
    match name {
        "mish" => Ok(Activation::Mish),
        "relu" => Ok(Activation::Relu),
        other => Err(RunError::Config(format!(
            "unknown activation {other:?}; expected \"mish\" or \"relu\""
        ))),
    }
}

/// Root directory for outputs: `$DPTRAIN_OUT` when set, else `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn default_output_dir(config: &ExperimentConfig) -> PathBuf {
    let mut name = format!("{}-seed{}", config.mode.as_str(), config.seed);
    if let Some(eps) = config.privacy.target_epsilon {
        name.push_str(&format!("-eps{eps}"));
    }
    output_root().join(name)
}

/// Validates the user config and fills every mode-dependent default.
pub fn resolve(config: &ExperimentConfig) -> Result<ResolvedConfig, RunError> {
    let private = config.mode == Mode::Private;

    let augment = config.training.augment.unwrap_or(!private);
    if private && augment {
        return Err(RunError::Config(
            "augmentation is not allowed in private mode".into(),
        ));
    }

    if private
        && config.privacy.target_epsilon.is_none()
        && config.privacy.noise_multiplier.is_none()
    {
        return Err(RunError::Config(
            "private mode needs privacy.target_epsilon or privacy.noise_multiplier".into(),
        ));
    }
    if let Some(eps) = config.privacy.target_epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(RunError::Config(format!("target_epsilon {eps} must be positive")));
        }
    }

    let cohort = if let Some(path) = &config.cohort.path {
        for (name, set) in [
            ("n_studies", config.cohort.n_studies.is_some()),
            ("image_size", config.cohort.image_size.is_some()),
            ("separability", config.cohort.separability.is_some()),
        ] {
            if set {
                return Err(RunError::Config(format!(
                    "cohort.{name} only applies to generated cohorts, not cohort.path"
                )));
            }
        }
        CohortSource::Loaded {
            path: path.clone(),
            train_fraction: config.cohort.train_fraction.unwrap_or(0.794),
            split_seed: config.cohort.seed.unwrap_or(config.seed),
        }
    } else {
        let mut spec = CohortSpec::standard(
            config.cohort.n_studies.unwrap_or(2000),
            config.cohort.seed.unwrap_or(config.seed),
        );
        if let Some(size) = config.cohort.image_size {
            spec.image_size = size;
        }
        if let Some(sep) = config.cohort.separability {
            spec.separability = sep;
        }
        if let Some(frac) = config.cohort.train_fraction {
            spec.train_fraction = frac;
        }
        spec.validate()?;
        CohortSource::Generated(spec)
    };

    let activation = match &config.model.activation {
        Some(name) => parse_activation(name)?,
        None if private => Activation::Mish,
        None => Activation::Relu,
    };

    let privacy = private.then(|| PrivacyPlan {
        target_epsilon: config.privacy.target_epsilon,
        noise_multiplier: config.privacy.noise_multiplier,
        clip_norm: config.privacy.clip_norm.unwrap_or(1.5),
        target_delta: config.privacy.target_delta.unwrap_or(6e-6),
        sampling_rate: config.privacy.sampling_rate,
    });
    if let Some(plan) = &privacy {
        if plan.clip_norm <= 0.0 || !plan.clip_norm.is_finite() {
            return Err(RunError::Config(format!("clip_norm {} must be positive", plan.clip_norm)));
        }
        if let Some(q) = plan.sampling_rate {
            if !(q > 0.0 && q <= 1.0) {
                return Err(RunError::Config(format!("sampling_rate {q} outside (0, 1]")));
            }
        }
    } else {
        let set = config.privacy.target_epsilon.is_some()
            || config.privacy.noise_multiplier.is_some()
            || config.privacy.sampling_rate.is_some();
        if set {
            return Err(RunError::Config(
                "privacy settings are only valid in private mode".into(),
            ));
        }
    }

    let batch_size = config.training.batch_size.unwrap_or(128);
    if batch_size == 0 {
        return Err(RunError::Config("batch_size must be positive".into()));
    }
    let epochs = config
        .training
        .epochs
        .unwrap_or(if private { 150 } else { 20 });
    if epochs == 0 {
        return Err(RunError::Config("epochs must be positive".into()));
    }
    let learning_rate = config
        .training
        .learning_rate
        .unwrap_or(if private { 5e-4 } else { 5e-5 });
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(RunError::Config(format!(
            "learning_rate {learning_rate} must be positive"
        )));
    }

    Ok(ResolvedConfig {
        mode: config.mode,
        seed: config.seed,
        output_dir: config
            .output_dir
            .clone()
            .unwrap_or_else(|| default_output_dir(config)),
        cohort,
        model_input_size: config.model.input_size,
        stage_widths: config.model.stage_widths.unwrap_or([8, 8, 16, 16]),
        groups: config.model.groups.unwrap_or(4),
        activation,
        learning_rate,
        epochs,
        batch_size,
        augment,
        bootstrap_redraws: config.training.bootstrap_redraws.unwrap_or(1000),
        init_checkpoint: config.training.init_checkpoint.clone(),
        privacy,
    })
}

impl ResolvedConfig {
    /// Model configuration for a given data image size.
    pub fn model_config(&self, cohort_image_size: usize) -> ModelConfig {
        ModelConfig {
            input_channels: 1,
            input_size: self.model_input_size.unwrap_or(cohort_image_size),
            stage_widths: self.stage_widths,
            groups_per_norm: self.groups,
            activation: self.activation,
            num_labels: 8,
        }
    }
}
