//! Elementwise nonlinearities and their exact derivatives.

use serde::{Deserialize, Serialize};

/// Activation used throughout a model's conv blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Mish,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Mish => mish(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Mish => mish_derivative(x),
        }
    }
}

/// Overflow-safe softplus: max(x, 0) + log1p(exp(−|x|)).
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// mish(x) = x · tanh(softplus(x)).
#[inline]
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

/// d/dx mish(x) = tanh(sp) + x · sech²(sp) · sigmoid(x).
#[inline]
pub fn mish_derivative(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
