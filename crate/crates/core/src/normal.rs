//! Standard normal distribution helpers and a one-sample Kolmogorov-Smirnov test.
//!
//! `Phi(x) = erfc(-x / sqrt 2) / 2` with `erfc` from libm (musl port, under
//! one ulp). The quantile starts from statrs' `erfc_inv` and takes one Halley
//! step against that `Phi`, so `quantile` and `cdf` agree to rounding.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{PI, SQRT_2};

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Standard normal quantile; `p` must lie in `[0, 1]`.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // Halley step on Phi(x) - p, using the smaller tail for accuracy
    let e = if p < 0.5 { cdf(x) - p } else { (1.0 - p) - sf(x) };
    let density = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let u = e / density;
    x - u / (1.0 + 0.5 * x * u)
}

/// `sup_x |F_n(x) - F(x)|` for the empirical CDF of `sample`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Critical value of the KS statistic at significance `alpha` for sample size
/// `n`: the Kolmogorov asymptotic quantile `sqrt(-ln(alpha/2) / 2)` with
/// Stephens' finite-sample correction `sqrt(n) + 0.12 + 0.11 / sqrt(n)`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let rn = (n as f64).sqrt();
    c / (rn + 0.12 + 0.11 / rn)
}
