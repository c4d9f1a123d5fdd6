//! Random variate generation on seeded ChaCha streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// The generator used throughout the crate.
pub type ModelRng = ChaCha8Rng;

/// A generator for `(seed, stream)`. Distinct streams from one seed are
/// independent, which lets parallel work draw from per-item streams and stay
/// reproducible regardless of scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ModelRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gamma variate with the given shape and rate.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let dist = rand_distr::Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::invalid(format!("gamma(shape={shape}, rate={rate}): {e}")))?;
    Ok(dist.sample(rng))
}

pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let dist = rand_distr::Beta::new(a, b).map_err(|e| Error::invalid(format!("beta({a}, {b}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Normal variate; `sd = 0` returns the mean exactly.
pub fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> Result<f64> {
    if !(sd >= 0.0) || !sd.is_finite() || !mean.is_finite() {
        return Err(Error::invalid(format!("normal(mean={mean}, sd={sd})")));
    }
    if sd == 0.0 {
        return Ok(mean);
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok(mean + sd * z)
}

/// `n` iid N(0, sd²) values.
pub fn normal_vec<R: Rng + ?Sized>(n: usize, sd: f64, rng: &mut R) -> Result<Vec<f64>> {
    (0..n).map(|_| normal(0.0, sd, rng)).collect()
}

/// Poisson variate; a zero rate always returns 0.
pub fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if rate == 0.0 {
        return Ok(0);
    }
    let dist = rand_distr::Poisson::new(rate).map_err(|e| Error::invalid(format!("poisson({rate}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("bernoulli({p})")));
    }
    Ok(rng.random::<f64>() < p)
}

pub fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> Result<u64> {
    let dist =
        rand_distr::Binomial::new(n, p).map_err(|e| Error::invalid(format!("binomial({n}, {p}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Index drawn with probability proportional to `weights`.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid(
            "categorical weights must be nonnegative with positive sum",
        ));
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return Ok(i);
        }
    }
    // rounding can leave target == total; return the last positive weight
    Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
}
