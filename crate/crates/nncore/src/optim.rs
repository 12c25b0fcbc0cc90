//! NAdam: Adam with Nesterov momentum and the standard momentum-decay
//! product schedule.

use serde::{Deserialize, Serialize};

use crate::NnError;

/// Hyperparameters of the update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NAdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Momentum-decay schedule constant ψ in μ_t = β₁(1 − ½·0.96^(tψ)).
    pub momentum_decay: f64,
}

impl NAdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for NAdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 4e-3,
        }
    }
}

/// Mutable optimizer state: moment vectors, step counter, and the running
/// product of momentum coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NAdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    /// Running Πμ_t. PyTorch stores this scalar in single precision even for
    /// double-precision parameters; we match that so trajectories agree.
    mu_product: f32,
}

impl NAdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            mu_product: 1.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. The recurrence (t counted from 1):
    ///   μ_t   = β₁(1 − ½·0.96^(tψ)),  μ_{t+1} analogous
    ///   m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
    ///   m̂ = μ_{t+1}m/(1 − Πμ·μ_{t+1}) + (1−μ_t)g/(1 − Πμ)
    ///   v̂ = v/(1 − β₂^t)
    ///   θ ← θ − lr·m̂/(√v̂ + ε)
    pub fn apply(
        &mut self,
        cfg: &NAdamConfig,
        params: &mut [f64],
        grad: &[f64],
    ) -> Result<(), NnError> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(NnError::ParamLength {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        self.step += 1;
        let t = self.step as f64;
        let mu_t = cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf(t * cfg.momentum_decay));
        let mu_next = cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf((t + 1.0) * cfg.momentum_decay));
        self.mu_product *= mu_t as f32;
        let mu_product = f64::from(self.mu_product);
        let mu_product_next = mu_product * mu_next;
        let bias2 = 1.0 - cfg.beta2.powf(t);
        let grad_scale = -cfg.learning_rate * (1.0 - mu_t) / (1.0 - mu_product);
        let momentum_scale = -cfg.learning_rate * mu_next / (1.0 - mu_product_next);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] += (1.0 - cfg.beta1) * (g - self.m[i]);
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let denom = (self.v[i] / bias2).sqrt() + cfg.eps;
            params[i] += grad_scale * (g / denom);
            params[i] += momentum_scale * (self.m[i] / denom);
        }
        Ok(())
    }
}
