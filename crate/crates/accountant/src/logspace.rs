//! Log-space primitives for the subsampled-Gaussian divergence series.
//!
//! The binomial sums behind the mechanism overflow in linear space for all
//! interesting parameter ranges, so every term is carried as a logarithm and
//! combined with stabilized add/sub.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(exp(a) - exp(b)) for a >= b.
pub fn log_sub(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b, "log_sub requires a >= b (got {a} < {b})");
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp_m1()).ln()
}

/// log(erfc(x)), valid over the whole real line.
///
/// `erfc` underflows to zero near x = 26.5 and its tail loses relative
/// accuracy well before that, so past x = 15 the Laurent expansion of the
/// upper tail (absolute log error < 5e-11 there, shrinking with x) is used.
pub fn log_erfc(x: f64) -> f64 {
    if x > 15.0 {
        let inv2 = (x * x).recip();
        -std::f64::consts::PI.ln() / 2.0 - x.ln() - x * x - 0.5 * inv2 + 0.625 * inv2 * inv2
            - (37.0 / 24.0) * inv2.powi(3)
            + (353.0 / 64.0) * inv2.powi(4)
    } else {
        erfc(x).ln()
    }
}

/// log|binom(alpha, k)| together with the sign of the coefficient, for real
/// alpha and integer k (the generalized binomial used by fractional orders).
pub fn ln_abs_binom(alpha: f64, k: u64) -> (f64, f64) {
    let mut log_abs = -ln_gamma(k as f64 + 1.0);
    let mut sign = 1.0;
    for j in 0..k {
        let factor = alpha - j as f64;
        if factor == 0.0 {
            return (f64::NEG_INFINITY, 1.0);
        }
        log_abs += factor.abs().ln();
        if factor < 0.0 {
            sign = -sign;
        }
    }
    (log_abs, sign)
}

/// log(binom(n, k)) for integer n >= k >= 0.
pub fn ln_binom(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}
