//! Special functions and the link transforms used by the model.

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// B_{2k} / (2k) for k = 1..8, the coefficients of the digamma asymptotic series.
const DIGAMMA_SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

/// B_{2k} / (2k (2k - 1)) for k = 1..8, the coefficients of Stirling's series.
const STIRLING_SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
];

/// B_{2k} for k = 1..7, the coefficients of the trigamma asymptotic series.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

const DIGAMMA_SHIFT: f64 = 10.0;
const LGAMMA_SHIFT: f64 = 15.0;

/// Digamma function Ψ(x) for x > 0, without argument checking.
///
/// Shifts the argument above 10 with Ψ(x) = Ψ(x + 1) − 1/x and finishes with
/// the asymptotic series.
#[inline]
pub fn digamma_unchecked(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < DIGAMMA_SHIFT {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let mut series = 0.0;
    for c in DIGAMMA_SERIES.iter().rev() {
        series = series * inv2 + c;
    }
    acc + z.ln() - 0.5 / z - series * inv2
}

/// Digamma function Ψ(x), defined for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

/// Trigamma function Ψ'(x) for x > 0, without argument checking.
///
/// Shifts the argument above 10 with Ψ'(x) = Ψ'(x + 1) + 1/x² and finishes
/// with the asymptotic series.
#[inline]
pub fn trigamma_unchecked(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < DIGAMMA_SHIFT {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for c in TRIGAMMA_SERIES.iter().rev() {
        series = series * inv2 + c;
    }
    acc + inv + 0.5 * inv2 + series * inv2 * inv
}

/// log Γ(x) for x > 0, without argument checking.
#[inline]
pub fn log_gamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut log_prod = 0.0;
    if z < LGAMMA_SHIFT {
        let mut prod = 1.0;
        while z < LGAMMA_SHIFT {
            prod *= z;
            z += 1.0;
        }
        log_prod = prod.ln();
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for c in STIRLING_SERIES.iter().rev() {
        series = series * inv2 + c;
    }
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series * inv - log_prod
}

/// log Γ(x), defined for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

/// log(1 + e^x), evaluated without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on y > 0.
#[inline]
pub fn inv_softplus(y: f64) -> f64 {
    if y > 20.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Logistic function 1 / (1 + e^{-x}).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// log(y!) for a count.
#[inline]
pub fn log_factorial(y: u32) -> f64 {
    log_gamma_unchecked(f64::from(y) + 1.0)
}
