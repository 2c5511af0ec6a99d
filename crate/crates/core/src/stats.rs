//! Paired and Welch two-sample t-tests.
//!
//! Two-sided p-values use the identity `p = I_{df/(df+t²)}(df/2, 1/2)` where
//! `I` is the regularized incomplete beta function, evaluated with the
//! modified Lentz continued fraction to a relative tolerance of 1e-15.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TTestKind {
    Paired,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub statistic: f64,
    pub degrees_freedom: f64,
    pub p_value: f64,
    pub kind: TTestKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("LENGTH_MISMATCH: paired samples have {a} and {b} values")]
    LengthMismatch { a: usize, b: usize },
    #[error("INSUFFICIENT_DATA: need at least 2 values per sample, got {0}")]
    InsufficientData(usize),
    #[error("ZERO_VARIANCE: the test statistic is undefined for constant data")]
    ZeroVariance,
    #[error("samples contain non-finite values")]
    NonFinite,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn magnitude(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// True when `var` is indistinguishable from the rounding error of data of
/// magnitude `scale`, so constant inputs such as `[0.7, 0.7, 0.7]` count as
/// constant even though their two-pass variance is not exactly zero.
fn negligible(var: f64, scale: f64) -> bool {
    let floor = 8.0 * f64::EPSILON * scale;
    var <= floor * floor
}

fn check(xs: &[f64]) -> Result<(), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::InsufficientData(xs.len()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Paired test on `a[i] - b[i]` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    check(a)?;
    check(b)?;
    let d: alloc::vec::Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let var = variance(&d);
    if negligible(var, magnitude(a).max(magnitude(b))) {
        return Err(StatsError::ZeroVariance);
    }
    let n = d.len() as f64;
    let t = mean(&d) / libm::sqrt(var / n);
    let df = n - 1.0;
    Ok(TTestResult {
        statistic: t,
        degrees_freedom: df,
        p_value: two_sided_p(t, df),
        kind: TTestKind::Paired,
    })
}

/// Welch's unequal-variance test with Welch–Satterthwaite degrees of freedom.
pub fn independent_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    check(a)?;
    check(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = variance(a) / na;
    let vb = variance(b) / nb;
    let se2 = va + vb;
    if negligible(variance(a), magnitude(a)) && negligible(variance(b), magnitude(b)) {
        return Err(StatsError::ZeroVariance);
    }
    let t = (mean(a) - mean(b)) / libm::sqrt(se2);
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTestResult {
        statistic: t,
        degrees_freedom: df,
        p_value: two_sided_p(t, df),
        kind: TTestKind::Independent,
    })
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// `I_x(a, b)` for `a, b > 0` and `x` in `[0, 1]`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = libm::exp(a * libm::log(x) + b * libm::log1p(-x) - ln_beta(a, b));
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
