//! The private gradient step: Poisson batch sampling, per-sample ℓ2
//! clipping, fixed-order aggregation, Gaussian noising, and the glue that
//! turns a privatized gradient into one optimizer update plus one
//! accounting tick.

use accountant::{AccountantError, DpSgdConfig, StepAccountant};
use nncore::{LabeledSample, Model, NAdamConfig, NAdamState, NnError, PerSampleGradients};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Failure modes of the private step.
#[derive(Debug, Error)]
pub enum DpSgdError {
    #[error("non-finite gradient entry in sample {sample}")]
    NonFiniteGradient { sample: usize },
    #[error("clip norm {0} must be positive and finite")]
    InvalidClipNorm(f64),
    #[error("expected batch size {0} must be positive and finite")]
    InvalidExpectedBatch(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Accounting(#[from] AccountantError),
}

/// The noised, averaged gradient of one step, with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivatizedGradient {
    pub values: Vec<f64>,
    /// Noise standard deviation in the output: σ·C / L.
    pub noise_std_applied: f64,
    /// How many samples the Poisson draw actually produced.
    pub realized_batch_size: usize,
    /// Identifier of the substream the noise was drawn from.
    pub rng_stream_id: u64,
}

/// The per-step Gaussian noise source: an independent substream per
/// (master seed, step index), so trajectories are reproducible no matter
/// how work is scheduled.
#[derive(Debug)]
pub struct NoiseStream {
    rng: rngutil::Substream,
    id: u64,
}

impl NoiseStream {
    pub fn for_step(master_seed: u64, step_index: u64) -> Self {
        Self {
            rng: rngutil::substream(master_seed, "noise", step_index),
            id: rngutil::stream_id("noise", step_index),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }
}

/// Per-step sampling stream, parallel to [`NoiseStream`].
pub fn sampling_stream(master_seed: u64, step_index: u64) -> rngutil::Substream {
    rngutil::substream(master_seed, "sample", step_index)
}

/// Draws a Poisson batch: each index enters independently with probability
/// `sampling_rate`. The result is ascending and may be empty.
pub fn poisson_sample<R: Rng>(
    dataset_size: usize,
    sampling_rate: f64,
    rng: &mut R,
) -> Vec<usize> {
    assert!(
        (0.0..=1.0).contains(&sampling_rate),
        "sampling rate {sampling_rate} outside [0, 1]"
    );
    (0..dataset_size)
        .filter(|_| rng.random_bool(sampling_rate))
        .collect()
}

fn row_scale(row: &[f64], clip_norm: f64, sample: usize) -> Result<Option<f64>, DpSgdError> {
    let mut sq = 0.0;
    for &g in row {
        if !g.is_finite() {
            return Err(DpSgdError::NonFiniteGradient { sample });
        }
        sq += g * g;
    }
    let norm = sq.sqrt();
    // Rows already inside the ball are passed through untouched (bitwise).
    // The relative slack absorbs the rounding of re-evaluating the norm of
    // an already-clipped row, making clipping idempotent.
    Ok((norm > clip_norm * (1.0 + 1e-12)).then(|| clip_norm / norm))
}

/// Scales each row to ℓ2-norm at most `clip_norm`: gᵢ · min(1, C/‖gᵢ‖).
/// Rows already within the bound are returned unchanged, so the operation
/// is idempotent.
pub fn clip_per_sample(
    grads: &PerSampleGradients,
    clip_norm: f64,
) -> Result<PerSampleGradients, DpSgdError> {
    if !(clip_norm > 0.0 && clip_norm.is_finite()) {
        return Err(DpSgdError::InvalidClipNorm(clip_norm));
    }
    let mut out = grads.clone();
    for i in 0..out.batch_size {
        let start = i * out.param_count;
        let row = &mut out.values[start..start + out.param_count];
        if let Some(scale) = row_scale(row, clip_norm, i)? {
            for g in row {
                *g *= scale;
            }
        }
    }
    Ok(out)
}

/// Clips, sums rows in input order, adds N(0, σ²C²) per coordinate, and
/// divides by the expected batch size L. With σ = 0 no randomness is
/// consumed and the output is exactly the clipped sum over L.
pub fn privatize(
    grads: &PerSampleGradients,
    clip_norm: f64,
    noise_multiplier: f64,
    expected_batch_size: f64,
    noise: &mut NoiseStream,
) -> Result<PrivatizedGradient, DpSgdError> {
    if !(expected_batch_size > 0.0 && expected_batch_size.is_finite()) {
        return Err(DpSgdError::InvalidExpectedBatch(expected_batch_size));
    }
    if !(clip_norm > 0.0 && clip_norm.is_finite()) {
        return Err(DpSgdError::InvalidClipNorm(clip_norm));
    }
    let mut values = vec![0.0; grads.param_count];
    for i in 0..grads.batch_size {
        let row = grads.row(i);
        let scale = row_scale(row, clip_norm, i)?;
        for (acc, &g) in values.iter_mut().zip(row) {
            *acc += scale.map_or(g, |s| g * s);
        }
    }
    if noise_multiplier > 0.0 {
        let std = noise_multiplier * clip_norm;
        for v in &mut values {
            let z: f64 = StandardNormal.sample(&mut noise.rng);
            *v += z * std;
        }
    }
    for v in &mut values {
        *v /= expected_batch_size;
    }
    Ok(PrivatizedGradient {
        values,
        noise_std_applied: noise_multiplier * clip_norm / expected_batch_size,
        realized_batch_size: grads.batch_size,
        rng_stream_id: noise.id,
    })
}

/// One full private step: per-sample gradients of the sampled batch are
/// clipped, aggregated, noised, fed to NAdam, and the accountant advances
/// by exactly one step. Empty batches still take a (pure-noise) step.
#[allow(clippy::too_many_arguments)]
pub fn private_training_step(
    model: &mut Model,
    batch: &[LabeledSample],
    pos_weights: &[f64],
    dp: &DpSgdConfig,
    expected_batch_size: f64,
    opt_config: &NAdamConfig,
    opt_state: &mut NAdamState,
    accountant: &mut StepAccountant,
    noise: &mut NoiseStream,
) -> Result<PrivatizedGradient, DpSgdError> {
    let (grads, _losses) = model.per_sample_gradients(batch, pos_weights)?;
    let privatized = privatize(
        &grads,
        dp.clip_norm,
        dp.noise_multiplier,
        expected_batch_size,
        noise,
    )?;
    opt_state.apply(opt_config, model.params_mut(), &privatized.values)?;
    accountant.record_steps(1);
    Ok(privatized)
}
