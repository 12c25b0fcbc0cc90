//! Deterministic nonparametric bootstrap with rejection of undefined draws.

use rand::Rng;

use crate::MetricError;

/// Default number of bootstrap redraws used by report builders.
pub const DEFAULT_REDRAWS: u64 = 1000;

/// Mean and population spread of a scalar statistic over bootstrap redraws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Population standard deviation over accepted redraws.
    pub spread: f64,
    pub accepted: u64,
    /// Redraws discarded because the statistic was undefined on the resample.
    pub rejected: u64,
}

/// Component-wise bootstrap summary for a vector-valued statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBootstrap {
    pub means: Vec<f64>,
    pub spreads: Vec<f64>,
    pub accepted: u64,
    pub rejected: u64,
}

fn population_stats(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Bootstraps a vector statistic over `redraws` row resamples.
///
/// Each attempt draws `n_rows` indices with replacement from its own derived
/// substream (seed, attempt index), so results do not depend on evaluation
/// order or thread count. The statistic returns `None` when undefined on a
/// resample (e.g. a single-class draw); such attempts are rejected and
/// replaced. If fewer than `redraws` attempts succeed within `2 * redraws`
/// tries — i.e. more than half are undefined — the run aborts with a
/// diagnostic instead of reporting a biased spread.
pub fn bootstrap_vector<F>(
    n_rows: usize,
    redraws: u64,
    seed: u64,
    mut statistic: F,
) -> Result<VectorBootstrap, MetricError>
where
    F: FnMut(&[usize]) -> Option<Vec<f64>>,
{
    if n_rows == 0 {
        return Err(MetricError::EmptyInput("bootstrap rows"));
    }
    if redraws == 0 {
        return Err(MetricError::EmptyInput("bootstrap redraws"));
    }

    let max_attempts = redraws * 2;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(redraws as usize);
    let mut indices = vec![0usize; n_rows];
    let mut attempts = 0u64;
    while (accepted.len() as u64) < redraws {
        if attempts >= max_attempts {
            return Err(MetricError::BootstrapUnstable {
                rejected: attempts - accepted.len() as u64,
                attempts,
            });
        }
        let mut rng = rngutil::substream(seed, "bootstrap", attempts);
        for slot in indices.iter_mut() {
            *slot = rng.random_range(0..n_rows);
        }
        attempts += 1;
        if let Some(values) = statistic(&indices) {
            if let Some(first) = accepted.first() {
                assert_eq!(values.len(), first.len(), "statistic dimension changed");
            }
            accepted.push(values);
        }
    }

    let dims = accepted[0].len();
    let mut means = Vec::with_capacity(dims);
    let mut spreads = Vec::with_capacity(dims);
    let mut column = vec![0.0; accepted.len()];
    for d in 0..dims {
        for (row, slot) in accepted.iter().zip(column.iter_mut()) {
            *slot = row[d];
        }
        let (mean, spread) = population_stats(&column);
        means.push(mean);
        spreads.push(spread);
    }
    Ok(VectorBootstrap {
        means,
        spreads,
        accepted: accepted.len() as u64,
        rejected: attempts - accepted.len() as u64,
    })
}

/// Scalar convenience wrapper around [`bootstrap_vector`].
pub fn bootstrap<F>(
    n_rows: usize,
    redraws: u64,
    seed: u64,
    mut statistic: F,
) -> Result<BootstrapSummary, MetricError>
where
    F: FnMut(&[usize]) -> Option<f64>,
{
    let result = bootstrap_vector(n_rows, redraws, seed, |idx| statistic(idx).map(|v| vec![v]))?;
    Ok(BootstrapSummary {
        mean: result.means[0],
        spread: result.spreads[0],
        accepted: result.accepted,
        rejected: result.rejected,
    })
}
