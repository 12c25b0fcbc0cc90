//! Executes one experiment end to end: data, training, evaluation, artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use accountant::{calibrate_sigma, DpSgdConfig, StepAccountant};
use datapipe::{
    augment, generate_cohort, load_cohort, resize, split_patientwise, Cohort, GrayImage,
    SplitIndices, LABEL_NAMES,
};
use dpsgd::{poisson_sample, privatize, private_training_step, sampling_stream, NoiseStream};
use fairmetrics::{
    compute_metric_report, subgroup_report, FairnessReport, Grouping, MetricReport,
    PredictionSet, NUM_LABELS,
};
use nncore::{
    config_hash, load_checkpoint, save_checkpoint, LabeledSample, Model, NAdamConfig, NAdamState,
    Tensor3,
};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CohortSource, Mode, PrivacyPlan, ResolvedConfig};
use crate::{resolve, ExperimentConfig, RunError};

/// Provenance record tying every artifact of a run together.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 over the stable fields (wall time, hash itself, and output
    /// location zeroed), so reruns of one experiment agree byte-for-byte.
    pub manifest_hash: String,
    pub code_version: String,
    pub config: ResolvedConfig,
    pub model_config_hash: String,
    pub param_count: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub steps_completed: u64,
    pub sampling_rate: Option<f64>,
    pub noise_multiplier: Option<f64>,
    /// Accountant-computed ε actually spent (never the requested target).
    pub achieved_epsilon: Option<f64>,
    pub best_order: Option<f64>,
    pub target_delta: Option<f64>,
    pub checkpoint_file: String,
    pub report_files: Vec<String>,
    /// Excluded from `manifest_hash`.
    pub wall_time_seconds: f64,
}

impl RunManifest {
    fn stable_hash(&self) -> String {
        let mut stable = self.clone();
        stable.manifest_hash = String::new();
        stable.wall_time_seconds = 0.0;
        stable.config.output_dir = PathBuf::new();
        let json = serde_json::to_string(&stable).expect("manifest serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Everything a finished run hands back to callers.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub metrics: MetricReport,
    pub fairness_age: FairnessReport,
    pub fairness_sex: FairnessReport,
    pub output_dir: PathBuf,
}

fn image_pixels(image: &GrayImage, target_size: usize) -> Vec<f64> {
    let scaled;
    let source = if image.height() == target_size {
        image
    } else {
        scaled = resize(image, target_size);
        &scaled
    };
    source.data().iter().map(|&p| f64::from(p) / 255.0).collect()
}

fn sample_from_image(
    image: &GrayImage,
    targets: Vec<f64>,
    input_size: usize,
) -> Result<LabeledSample, RunError> {
    let pixels = image_pixels(image, input_size);
    let tensor = Tensor3::from_grayscale(input_size, input_size, &pixels, 1)?;
    Ok(LabeledSample { image: tensor, targets })
}

/// Inverted class frequencies of the training split: weight = N / N_positive.
fn positive_weights(cohort: &Cohort, train: &[usize]) -> Vec<f64> {
    let mut positives = [0usize; NUM_LABELS];
    for &idx in train {
        for (count, &is_pos) in positives.iter_mut().zip(&cohort.studies[idx].labels().0) {
            *count += usize::from(is_pos);
        }
    }
    positives
        .iter()
        .map(|&p| train.len() as f64 / p.max(1) as f64)
        .collect()
}

/// Scores the test split with the model and packages predictions for the
/// metric and fairness reports.
pub fn predict_split(
    model: &Model,
    cohort: &Cohort,
    rows: &[usize],
) -> Result<PredictionSet, RunError> {
    let input_size = model.config().input_size;
    let mut scores = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    let mut subgroups = Vec::with_capacity(rows.len());
    for &idx in rows {
        let study = &cohort.studies[idx];
        let pixels = image_pixels(&study.image, input_size);
        let tensor = Tensor3::from_grayscale(input_size, input_size, &pixels, 1)?;
        let probs = model.predict(&tensor)?;
        let mut row = [0.0f64; NUM_LABELS];
        row.copy_from_slice(&probs);
        scores.push(row);
        targets.push(study.labels().0);
        subgroups.push(study.subgroup()?);
    }
    Ok(PredictionSet::new(scores, targets, subgroups)?)
}

struct TrainedModel {
    model: Model,
    steps_completed: u64,
    prior_steps: u64,
    sampling_rate: Option<f64>,
    noise_multiplier: Option<f64>,
    achieved_epsilon: Option<f64>,
    best_order: Option<f64>,
}

fn train_private(
    mut model: Model,
    samples: &[LabeledSample],
    pos_weights: &[f64],
    plan: &PrivacyPlan,
    resolved: &ResolvedConfig,
) -> Result<TrainedModel, RunError> {
    let n_train = samples.len();
    let q = match plan.sampling_rate {
        Some(q) => q,
        None => (resolved.batch_size as f64 / n_train as f64).min(1.0),
    };
    let steps_per_epoch = (1.0 / q).round().max(1.0) as u64;
    let steps = resolved.epochs * steps_per_epoch;

    let sigma = match plan.noise_multiplier {
        Some(sigma) => sigma,
        None => {
            let target = plan.target_epsilon.expect("resolve() enforces one of the two");
            calibrate_sigma(target, q, steps, plan.target_delta)?.sigma
        }
    };
    let dp = DpSgdConfig {
        sampling_rate: q,
        noise_multiplier: sigma,
        clip_norm: plan.clip_norm,
        steps,
        target_delta: plan.target_delta,
    };
    dp.validate()?;

    // σ = 0 spends unbounded ε; the accountant refuses it, so such debug
    // runs are executed without accounting and report no achieved ε.
    let mut accountant = if sigma > 0.0 {
        Some(StepAccountant::new(q, sigma, plan.target_delta)?)
    } else {
        None
    };

    let opt = NAdamConfig::with_learning_rate(resolved.learning_rate);
    let mut state = NAdamState::new(model.param_count());
    let expected_batch = q * n_train as f64;
    let seed = resolved.seed;

    for step in 0..steps {
        let picked = poisson_sample(n_train, q, &mut sampling_stream(seed, step));
        let batch: Vec<LabeledSample> = picked.iter().map(|&i| samples[i].clone()).collect();
        let mut noise = NoiseStream::for_step(seed, step);
        match accountant.as_mut() {
            Some(acct) => {
                private_training_step(
                    &mut model,
                    &batch,
                    pos_weights,
                    &dp,
                    expected_batch,
                    &opt,
                    &mut state,
                    acct,
                    &mut noise,
                )?;
                if let Some(target) = plan.target_epsilon {
                    let spent = acct.spent()?.budget.epsilon;
                    if spent > target * (1.0 + 1e-9) {
                        return Err(RunError::BudgetExceeded {
                            step: step + 1,
                            spent,
                            target,
                        });
                    }
                }
            }
            None => {
                let (grads, _) = model.per_sample_gradients(&batch, pos_weights)?;
                let update =
                    privatize(&grads, dp.clip_norm, 0.0, expected_batch, &mut noise)?;
                state.apply(&opt, model.params_mut(), &update.values)?;
            }
        }
    }

    let (achieved, best_order) = match &accountant {
        Some(acct) => {
            let spent = acct.spent()?;
            (Some(spent.budget.epsilon), Some(spent.best_order))
        }
        None => (None, None),
    };
    Ok(TrainedModel {
        model,
        steps_completed: steps,
        prior_steps: 0,
        sampling_rate: Some(q),
        noise_multiplier: Some(sigma),
        achieved_epsilon: achieved,
        best_order,
    })
}

fn train_nonprivate(
    mut model: Model,
    cohort: &Cohort,
    train: &[usize],
    samples: &[LabeledSample],
    pos_weights: &[f64],
    resolved: &ResolvedConfig,
) -> Result<TrainedModel, RunError> {
    let opt = NAdamConfig::with_learning_rate(resolved.learning_rate);
    let mut state = NAdamState::new(model.param_count());
    let input_size = model.config().input_size;
    let mut steps = 0u64;

    for epoch in 0..resolved.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rngutil::substream(resolved.seed, "batch-order", epoch));
        let mut augment_rng = rngutil::substream(resolved.seed, "augment", epoch);

        for chunk in order.chunks(resolved.batch_size) {
            let batch: Vec<LabeledSample> = if resolved.augment {
                let mut batch = Vec::with_capacity(chunk.len());
                for &pos in chunk {
                    let study = &cohort.studies[train[pos]];
                    let image = augment(&study.image, &mut augment_rng, true);
                    batch.push(sample_from_image(
                        &image,
                        study.labels().to_targets(),
                        input_size,
                    )?);
                }
                batch
            } else {
                chunk.iter().map(|&pos| samples[pos].clone()).collect()
            };
            let (grad, _loss) = model.batch_gradient(&batch, pos_weights)?;
            state.apply(&opt, model.params_mut(), &grad)?;
            steps += 1;
        }
    }

    Ok(TrainedModel {
        model,
        steps_completed: steps,
        prior_steps: 0,
        sampling_rate: None,
        noise_multiplier: None,
        achieved_epsilon: None,
        best_order: None,
    })
}

fn initial_model(
    resolved: &ResolvedConfig,
    cohort_image_size: usize,
) -> Result<(Model, u64), RunError> {
    let model_config = resolved.model_config(cohort_image_size);
    match &resolved.init_checkpoint {
        Some(path) => {
            let (model, manifest) = load_checkpoint(path, Some(&model_config))?;
            Ok((model, manifest.steps_completed))
        }
        None => Ok((Model::new(model_config, resolved.seed)?, 0)),
    }
}

fn format_float(v: f64) -> String {
    format!("{v:.12}")
}

/// Writes `predictions.csv`: one row per test study with scores, targets,
/// and the subgroup metadata the audit needs.
fn predictions_csv(
    cohort: &Cohort,
    rows: &[usize],
    predictions: &PredictionSet,
    manifest_hash: &str,
) -> String {
    let mut out = format!("# manifest {manifest_hash}\n");
    out.push_str("filename,patient_id,age,sex,comorbidity_count");
    for name in LABEL_NAMES {
        out.push_str(&format!(",score_{name}"));
    }
    for name in LABEL_NAMES {
        out.push_str(&format!(",target_{name}"));
    }
    out.push('\n');
    for (i, &idx) in rows.iter().enumerate() {
        let study = &cohort.studies[idx];
        out.push_str(&format!(
            "{},{},{},{},{}",
            study.filename,
            study.patient_id,
            study.age,
            study.sex.as_str(),
            predictions.subgroups()[i].comorbidity_count,
        ));
        for label in 0..NUM_LABELS {
            out.push(',');
            out.push_str(&format_float(predictions.scores()[i][label]));
        }
        for label in 0..NUM_LABELS {
            out.push_str(if predictions.targets()[i][label] { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

fn write_report_files(
    dir: &Path,
    manifest_hash: &str,
    metrics: &MetricReport,
    fairness_age: &FairnessReport,
    fairness_sex: &FairnessReport,
) -> Result<Vec<String>, RunError> {
    let mut files = Vec::new();
    let mut write_pair =
        |stem: &str, csv: String, json_value: serde_json::Value| -> Result<(), RunError> {
            let csv_name = format!("{stem}.csv");
            let mut tagged = format!("# manifest {manifest_hash}\n");
            tagged.push_str(&csv);
            fs::write(dir.join(&csv_name), tagged)?;
            files.push(csv_name);

            let json_name = format!("{stem}.json");
            let wrapped = serde_json::json!({
                "manifest_hash": manifest_hash,
                "report": json_value,
            });
            fs::write(dir.join(&json_name), serde_json::to_string_pretty(&wrapped)?)?;
            files.push(json_name);
            Ok(())
        };
    write_pair("metrics", metrics.to_csv(), serde_json::to_value(metrics)?)?;
    write_pair("fairness_age", fairness_age.to_csv(), serde_json::to_value(fairness_age)?)?;
    write_pair("fairness_sex", fairness_sex.to_csv(), serde_json::to_value(fairness_sex)?)?;
    Ok(files)
}

/// Trains, evaluates, and writes all artifacts for one experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let resolved = resolve(config)?;

    let cohort = match &resolved.cohort {
        CohortSource::Generated(spec) => generate_cohort(spec)?,
        CohortSource::Loaded { path, .. } => load_cohort(path)?,
    };
    let (train_fraction, split_seed) = match &resolved.cohort {
        CohortSource::Generated(spec) => (spec.train_fraction, spec.seed),
        CohortSource::Loaded { train_fraction, split_seed, .. } => (*train_fraction, *split_seed),
    };
    let SplitIndices { train, test } = split_patientwise(&cohort, train_fraction, split_seed);
    if train.is_empty() || test.is_empty() {
        return Err(RunError::Config("split produced an empty train or test set".into()));
    }

    let (model, prior_steps) = initial_model(&resolved, cohort.image_size)?;
    let input_size = model.config().input_size;
    let pos_weights = positive_weights(&cohort, &train);
    let samples: Vec<LabeledSample> = train
        .iter()
        .map(|&idx| {
            let study = &cohort.studies[idx];
            sample_from_image(&study.image, study.labels().to_targets(), input_size)
        })
        .collect::<Result<_, _>>()?;

    let mut trained = match (&resolved.privacy, resolved.mode) {
        (Some(plan), Mode::Private) => {
            train_private(model, &samples, &pos_weights, plan, &resolved)?
        }
        _ => train_nonprivate(model, &cohort, &train, &samples, &pos_weights, &resolved)?,
    };
    trained.prior_steps = prior_steps;

    let predictions = predict_split(&trained.model, &cohort, &test)?;
    let metrics = compute_metric_report(&predictions, resolved.bootstrap_redraws, resolved.seed)?;
    let fairness_age = subgroup_report(&predictions, Grouping::AgeBins)?;
    let fairness_sex = subgroup_report(&predictions, Grouping::Sex)?;

    let mut manifest = RunManifest {
        manifest_hash: String::new(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: resolved.clone(),
        model_config_hash: config_hash(trained.model.config()),
        param_count: trained.model.param_count(),
        n_train: train.len(),
        n_test: test.len(),
        steps_completed: trained.steps_completed,
        sampling_rate: trained.sampling_rate,
        noise_multiplier: trained.noise_multiplier,
        achieved_epsilon: trained.achieved_epsilon,
        best_order: trained.best_order,
        target_delta: resolved.privacy.as_ref().map(|p| p.target_delta),
        checkpoint_file: "checkpoint.bin".to_string(),
        report_files: vec![
            "metrics.csv".into(),
            "metrics.json".into(),
            "fairness_age.csv".into(),
            "fairness_age.json".into(),
            "fairness_sex.csv".into(),
            "fairness_sex.json".into(),
            "predictions.csv".into(),
        ],
        wall_time_seconds: 0.0,
    };
    manifest.manifest_hash = manifest.stable_hash();

    let dir = resolved.output_dir.clone();
    fs::create_dir_all(&dir)?;
    write_report_files(&dir, &manifest.manifest_hash, &metrics, &fairness_age, &fairness_sex)?;
    fs::write(
        dir.join("predictions.csv"),
        predictions_csv(&cohort, &test, &predictions, &manifest.manifest_hash),
    )?;
    save_checkpoint(
        &trained.model,
        trained.prior_steps + trained.steps_completed,
        &dir.join("checkpoint.bin"),
    )?;

    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    Ok(RunOutcome { manifest, metrics, fairness_age, fairness_sex, output_dir: dir })
}
