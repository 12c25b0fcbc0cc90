//! Rényi-DP accounting for Poisson-subsampled Gaussian mechanisms.
//!
//! Provides the per-step subsampled-Gaussian RDP bound (computed in log
//! space), linear composition across steps, the tightened RDP → (ε, δ)
//! conversion, and bisection calibration of the noise multiplier needed to
//! land on a target ε without ever exceeding it.

mod logspace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use logspace::{ln_abs_binom, ln_binom, log_add, log_erfc, log_sub};

/// Smallest noise multiplier probed during calibration.
pub const SIGMA_SEARCH_MIN: f64 = 1e-2;
/// Largest noise multiplier probed during calibration.
pub const SIGMA_SEARCH_MAX: f64 = 1e4;
/// Calibration accepts an achieved ε in `[(1 - tol)·target, target]`.
pub const CALIBRATION_TOL: f64 = 1e-3;

/// Failure modes of accounting and calibration.
#[derive(Debug, Error, PartialEq)]
pub enum AccountantError {
    #[error("sampling rate must lie in (0, 1], got {0}")]
    InvalidSamplingRate(f64),
    #[error("noise multiplier must be positive and finite, got {0}")]
    InvalidNoiseMultiplier(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("clip norm must be positive and finite, got {0}")]
    InvalidClipNorm(f64),
    #[error("step count must be at least 1")]
    InvalidSteps,
    #[error("Rényi orders must be non-empty, strictly increasing, and all > 1")]
    InvalidOrders,
    #[error("divergence values must be nonnegative and match the order grid length")]
    InvalidCurveValues,
    #[error("cannot combine curves over different order grids")]
    OrderGridMismatch,
    #[error("target epsilon must be positive and finite, got {0}")]
    InvalidTargetEpsilon(f64),
    #[error(
        "target epsilon {target} unreachable: sigma {sigma_limit} still yields epsilon {achieved}"
    )]
    TargetUnreachable {
        target: f64,
        sigma_limit: f64,
        achieved: f64,
    },
}

/// An (ε, δ) differential-privacy guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    /// Privacy loss bound ε ≥ 0.
    pub epsilon: f64,
    /// Failure probability δ ∈ (0, 1).
    pub delta: f64,
}

/// An (ε, δ) bound together with the Rényi order that attained it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetAtOrder {
    pub budget: PrivacyBudget,
    /// Order minimizing the RDP → DP conversion; useful as a diagnostic
    /// (values at the edge of the grid suggest widening it).
    pub best_order: f64,
}

/// Result of calibrating the noise multiplier to a target ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedNoise {
    /// Smallest grid-searched σ whose achieved ε does not exceed the target.
    pub sigma: f64,
    pub achieved: PrivacyBudget,
    pub best_order: f64,
}

/// Mechanism parameters governing one private training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    /// Poisson inclusion probability q ∈ (0, 1].
    pub sampling_rate: f64,
    /// Noise multiplier σ ≥ 0 (0 disables noising and makes the run non-private).
    pub noise_multiplier: f64,
    /// Per-sample ℓ2 clipping bound C > 0.
    pub clip_norm: f64,
    /// Number of optimization steps T ≥ 1.
    pub steps: u64,
    /// δ at which budgets are reported.
    pub target_delta: f64,
}

impl DpSgdConfig {
    /// Checks the field invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), AccountantError> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(AccountantError::InvalidSamplingRate(self.sampling_rate));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(AccountantError::InvalidNoiseMultiplier(self.noise_multiplier));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(AccountantError::InvalidClipNorm(self.clip_norm));
        }
        if self.steps == 0 {
            return Err(AccountantError::InvalidSteps);
        }
        if !(self.target_delta > 0.0 && self.target_delta < 1.0) {
            return Err(AccountantError::InvalidDelta(self.target_delta));
        }
        Ok(())
    }

    /// Privacy spent by running all `steps` steps of this mechanism.
    pub fn budget(&self) -> Result<BudgetAtOrder, AccountantError> {
        self.validate()?;
        let curve = rdp_subsampled_gaussian(
            self.sampling_rate,
            self.noise_multiplier,
            &default_orders(),
        )?;
        curve.compose(self.steps).to_epsilon(self.target_delta)
    }
}

/// Rényi divergence bounds at a fixed grid of orders.
///
/// Curves over identical grids compose additively across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    orders: Vec<f64>,
    values: Vec<f64>,
}

impl RdpCurve {
    /// Builds a curve, enforcing a strictly increasing order grid (> 1) and
    /// nonnegative values of matching length.
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self, AccountantError> {
        validate_orders(&orders)?;
        if values.len() != orders.len() || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(AccountantError::InvalidCurveValues);
        }
        Ok(Self { orders, values })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear composition: the divergence of `steps` sequential applications.
    pub fn compose(&self, steps: u64) -> RdpCurve {
        RdpCurve {
            orders: self.orders.clone(),
            values: self.values.iter().map(|v| v * steps as f64).collect(),
        }
    }

    /// Element-wise sum of two curves over the same grid (heterogeneous
    /// composition, e.g. phases with different noise levels).
    pub fn add(&self, other: &RdpCurve) -> Result<RdpCurve, AccountantError> {
        if self.orders != other.orders {
            return Err(AccountantError::OrderGridMismatch);
        }
        Ok(RdpCurve {
            orders: self.orders.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Tightened RDP → DP conversion, minimized over the order grid:
    /// ε(α) = rdp(α) − (ln δ + ln α)/(α − 1) + ln((α − 1)/α).
    pub fn to_epsilon(&self, delta: f64) -> Result<BudgetAtOrder, AccountantError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountantError::InvalidDelta(delta));
        }
        let mut best_eps = f64::INFINITY;
        let mut best_order = f64::NAN;
        for (&alpha, &rdp) in self.orders.iter().zip(&self.values) {
            let eps = rdp - (delta.ln() + alpha.ln()) / (alpha - 1.0)
                + ((alpha - 1.0) / alpha).ln();
            if eps < best_eps {
                best_eps = eps;
                best_order = alpha;
            }
        }
        Ok(BudgetAtOrder {
            budget: PrivacyBudget {
                epsilon: best_eps.max(0.0),
                delta,
            },
            best_order,
        })
    }
}

/// The default order grid: dense low orders plus integers up to 64.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75, 2.0, 2.5];
    orders.extend((3..=64).map(f64::from));
    orders
}

fn validate_orders(orders: &[f64]) -> Result<(), AccountantError> {
    if orders.is_empty() || orders.iter().any(|a| !(*a > 1.0) || !a.is_finite()) {
        return Err(AccountantError::InvalidOrders);
    }
    if orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AccountantError::InvalidOrders);
    }
    Ok(())
}

/// Per-step RDP of the Poisson-subsampled Gaussian mechanism at each order.
///
/// For q = 1 this is the plain Gaussian closed form α/(2σ²); for q < 1 the
/// stabilized binomial series (integer orders) or the two-sided erfc series
/// (fractional orders) is evaluated in log space.
pub fn rdp_subsampled_gaussian(
    q: f64,
    sigma: f64,
    orders: &[f64],
) -> Result<RdpCurve, AccountantError> {
    if !(q > 0.0 && q <= 1.0) || !q.is_finite() {
        return Err(AccountantError::InvalidSamplingRate(q));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(AccountantError::InvalidNoiseMultiplier(sigma));
    }
    validate_orders(orders)?;
    let values = orders
        .iter()
        .map(|&alpha| rdp_single_order(q, sigma, alpha).max(0.0))
        .collect();
    Ok(RdpCurve {
        orders: orders.to_vec(),
        values,
    })
}

fn rdp_single_order(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    if alpha.fract() == 0.0 {
        log_a_integer(q, sigma, alpha as u64) / (alpha - 1.0)
    } else {
        log_a_fractional(q, sigma, alpha) / (alpha - 1.0)
    }
}

/// log A_α for integer α: Σ_i C(α,i) q^i (1−q)^(α−i) exp((i²−i)/(2σ²)).
fn log_a_integer(q: f64, sigma: f64, alpha: u64) -> f64 {
    let mut log_a = f64::NEG_INFINITY;
    for i in 0..=alpha {
        let log_coef =
            ln_binom(alpha, i) + i as f64 * q.ln() + (alpha - i) as f64 * (-q).ln_1p();
        let s = log_coef + (i * i - i) as f64 / (2.0 * sigma * sigma);
        log_a = log_add(log_a, s);
    }
    log_a
}

/// log A_α for fractional α via the two-sided series split at
/// z0 = σ² ln(1/q − 1) + 1/2, with erfc tail weights; terms beyond
/// max(log s0, log s1) < −30 are negligible.
fn log_a_fractional(q: f64, sigma: f64, alpha: f64) -> f64 {
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2_sigma = std::f64::consts::SQRT_2 * sigma;
    let two_sigma_sq = 2.0 * sigma * sigma;
    let log_half = 0.5f64.ln();

    let mut i = 0u64;
    loop {
        let (log_coef, coef_sign) = ln_abs_binom(alpha, i);
        let fi = i as f64;
        let j = alpha - fi;

        let log_t0 = log_coef + fi * q.ln() + j * (-q).ln_1p();
        let log_t1 = log_coef + j * q.ln() + fi * (-q).ln_1p();
        let log_e0 = log_half + log_erfc((fi - z0) / sqrt2_sigma);
        let log_e1 = log_half + log_erfc((z0 - j) / sqrt2_sigma);
        let log_s0 = log_t0 + (fi * fi - fi) / two_sigma_sq + log_e0;
        let log_s1 = log_t1 + (j * j - j) / two_sigma_sq + log_e1;

        if coef_sign > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }

        i += 1;
        if log_s0.max(log_s1) < -30.0 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

/// Full pipeline ε for a given σ: per-step curve, composed T steps,
/// converted at δ over the default order grid.
pub fn epsilon_given_sigma(
    q: f64,
    sigma: f64,
    steps: u64,
    delta: f64,
) -> Result<BudgetAtOrder, AccountantError> {
    if steps == 0 {
        return Err(AccountantError::InvalidSteps);
    }
    rdp_subsampled_gaussian(q, sigma, &default_orders())?
        .compose(steps)
        .to_epsilon(delta)
}

/// Finds the smallest σ (privacy-safe rounding: achieved ε never exceeds the
/// target) such that ε ∈ [(1 − tol)·target, target], by bisection on log σ
/// over [`SIGMA_SEARCH_MIN`, `SIGMA_SEARCH_MAX`].
pub fn calibrate_sigma(
    target_epsilon: f64,
    q: f64,
    steps: u64,
    delta: f64,
) -> Result<CalibratedNoise, AccountantError> {
    if !(target_epsilon > 0.0 && target_epsilon.is_finite()) {
        return Err(AccountantError::InvalidTargetEpsilon(target_epsilon));
    }
    let eps_at = |sigma: f64| epsilon_given_sigma(q, sigma, steps, delta);

    let at_max = eps_at(SIGMA_SEARCH_MAX)?;
    if at_max.budget.epsilon > target_epsilon {
        return Err(AccountantError::TargetUnreachable {
            target: target_epsilon,
            sigma_limit: SIGMA_SEARCH_MAX,
            achieved: at_max.budget.epsilon,
        });
    }
    let at_min = eps_at(SIGMA_SEARCH_MIN)?;
    if at_min.budget.epsilon < target_epsilon {
        return Err(AccountantError::TargetUnreachable {
            target: target_epsilon,
            sigma_limit: SIGMA_SEARCH_MIN,
            achieved: at_min.budget.epsilon,
        });
    }

    let mut lo = SIGMA_SEARCH_MIN;
    let mut hi = SIGMA_SEARCH_MAX;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if eps_at(mid)?.budget.epsilon > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }

    let achieved = eps_at(hi)?;
    let eps = achieved.budget.epsilon;
    if !(eps <= target_epsilon && eps >= (1.0 - CALIBRATION_TOL) * target_epsilon) {
        return Err(AccountantError::TargetUnreachable {
            target: target_epsilon,
            sigma_limit: hi,
            achieved: eps,
        });
    }
    Ok(CalibratedNoise {
        sigma: hi,
        achieved: achieved.budget,
        best_order: achieved.best_order,
    })
}

/// Tracks privacy spent by a training loop, one subsampled Gaussian step at
/// a time. Composition is linear, so the per-step curve is cached and scaled.
#[derive(Debug, Clone)]
pub struct StepAccountant {
    per_step: RdpCurve,
    delta: f64,
    steps_taken: u64,
}

impl StepAccountant {
    pub fn new(q: f64, sigma: f64, delta: f64) -> Result<Self, AccountantError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountantError::InvalidDelta(delta));
        }
        Ok(Self {
            per_step: rdp_subsampled_gaussian(q, sigma, &default_orders())?,
            delta,
            steps_taken: 0,
        })
    }

    pub fn record_steps(&mut self, n: u64) {
        self.steps_taken += n;
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Budget spent so far (the degenerate 0-step curve converts to ε from
    /// the δ terms alone, clamped at 0).
    pub fn spent(&self) -> Result<BudgetAtOrder, AccountantError> {
        self.per_step.compose(self.steps_taken).to_epsilon(self.delta)
    }
}
