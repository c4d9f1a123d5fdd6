//! Sampling correlated random measures from truncated stick-breaking tuples.
//!
//! A draw shares its tuples `(a_k, w_k, ℓ_k)`; each realization draws a
//! Gaussian process `F(ℓ) = d · ℓ + μ` with `d ~ N(0, I)` and then
//! transformed weights `x_k ~ T(· | w_k, F(ℓ_k))`. Atoms are abstract: atom
//! `k` is identified by its index, and callers attach payloads.

mod verify;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathfn::sample::{bernoulli, beta, gamma, normal_vec};
use crate::mathfn::{dot, logit, sigmoid, softplus};

pub use verify::{
    mc_finiteness_check, mc_laplace_check, mc_pairwise_covariance, FinitenessReport, FinitenessSpec,
    FinitenessStatus, LaplaceCheck, LaplaceSpec, McEstimate,
};

/// Hyperparameters of a truncated gamma-process tuple draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TupleSpec {
    /// Gamma-process mass `α = H(E)`.
    pub alpha: f64,
    /// Gamma-process rate.
    pub c: f64,
    pub truncation: usize,
    pub dim: usize,
    /// Variance of each location coordinate; zero gives zero locations.
    pub sigma_l2: f64,
}

impl TupleSpec {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma process needs positive mass and rate, got α={} c={}",
                self.alpha, self.c
            )));
        }
        if self.truncation == 0 {
            return Err(Error::invalid("truncation must be at least 1"));
        }
        if !(self.sigma_l2 >= 0.0 && self.sigma_l2.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma_l2 must be nonnegative, got {}",
                self.sigma_l2
            )));
        }
        Ok(())
    }
}

/// Truncated tuples `(k, w_k, ℓ_k)` shared by every realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleSet {
    pub weights: Vec<f64>,
    /// Component-major, `dim` columns.
    pub locations: Vec<f64>,
    pub dim: usize,
}

impl TupleSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn location(&self, k: usize) -> &[f64] {
        &self.locations[k * self.dim..(k + 1) * self.dim]
    }
}

/// `w_k = s V_k Π_{j<k} (1 − V_j)`.
pub fn stick_weights(scale: f64, sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    sticks
        .iter()
        .map(|v| {
            let w = scale * v * rest;
            rest *= 1.0 - v;
            w
        })
        .collect()
}

/// `s ~ Gamma(α, c)`, `V_k ~ Beta(1, α)`, `ℓ_k ~ N(0, σ_l² I)`.
pub fn sample_gamma_process_tuples<R: Rng + ?Sized>(spec: &TupleSpec, rng: &mut R) -> Result<TupleSet> {
    spec.validate()?;
    let scale = gamma(spec.alpha, spec.c, rng)?;
    let mut sticks = Vec::with_capacity(spec.truncation);
    for _ in 0..spec.truncation {
        sticks.push(beta(1.0, spec.alpha, rng)?);
    }
    let locations = normal_vec(spec.truncation * spec.dim, spec.sigma_l2.sqrt(), rng)?;
    Ok(TupleSet {
        weights: stick_weights(scale, &sticks),
        locations,
        dim: spec.dim,
    })
}

/// Beta-process tuples by stick breaking: `π_k = Π_{j≤k} ν_j` with
/// `ν_j ~ Beta(α, 1)`, so every weight lies in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTuples {
    pub tuples: TupleSet,
    /// `E[Σ_{k>T} π_k] = α (α/(1+α))^T`, the expected mass dropped by truncating.
    pub truncation_bias: f64,
}

pub fn sample_beta_process_tuples<R: Rng + ?Sized>(
    alpha: f64,
    truncation: usize,
    dim: usize,
    sigma_l2: f64,
    rng: &mut R,
) -> Result<BetaTuples> {
    TupleSpec {
        alpha,
        c: 1.0,
        truncation,
        dim,
        sigma_l2,
    }
    .validate()?;
    let mut weights = Vec::with_capacity(truncation);
    let mut prod = 1.0;
    for _ in 0..truncation {
        prod *= beta(alpha, 1.0, rng)?;
        // keep weights strictly inside (0, 1) for the logistic transform
        weights.push(prod.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
    }
    let locations = normal_vec(truncation * dim, sigma_l2.sqrt(), rng)?;
    Ok(BetaTuples {
        tuples: TupleSet {
            weights,
            locations,
            dim,
        },
        truncation_bias: alpha * (alpha / (1.0 + alpha)).powi(truncation as i32),
    })
}

/// `F(ℓ_k) = d · ℓ_k + μ` for one `d ~ N(0, I_D)`, so the values are jointly
/// Gaussian with covariance `ℓ_i · ℓ_j`.
pub fn gp_linear_draw<R: Rng + ?Sized>(
    locations: &[f64],
    dim: usize,
    mean: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::invalid("location dimension must be at least 1"));
    }
    if !locations.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim * (locations.len() / dim + 1),
            got: locations.len(),
        });
    }
    let d = normal_vec(dim, 1.0, rng)?;
    Ok(locations.chunks(dim).map(|l| dot(&d, l) + mean).collect())
}

/// Conditional law of a transformed weight given `w` and `F(ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    /// `x = w`: a completely random measure.
    Identity,
    /// `x ~ Gamma(w, e^{−F})`.
    GammaExp,
    /// `x ~ Gamma(w, 1 / softplus(F))`.
    GammaSoftplus,
    /// `x ~ Bernoulli(σ(σ⁻¹(w) + F))`, for `w ∈ (0, 1)`.
    #[serde(rename = "beta-bernoulli-logistic", alias = "beta-bernoulli")]
    BetaBernoulli,
    /// `x ~ Bernoulli(w e^F / (1 + w e^F))`.
    GammaBernoulli,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Identity,
        TransformKind::GammaExp,
        TransformKind::GammaSoftplus,
        TransformKind::BetaBernoulli,
        TransformKind::GammaBernoulli,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::GammaExp => "gamma-exp",
            TransformKind::GammaSoftplus => "gamma-softplus",
            TransformKind::BetaBernoulli => "beta-bernoulli-logistic",
            TransformKind::GammaBernoulli => "gamma-bernoulli",
        }
    }

    /// Accepts every [`name`](Self::name) and the short form `beta-bernoulli`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "beta-bernoulli" {
            return Ok(TransformKind::BetaBernoulli);
        }
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown transformation `{s}`")))
    }

    fn check_weight(self, w: f64) -> Result<()> {
        let ok = match self {
            TransformKind::BetaBernoulli => w > 0.0 && w < 1.0,
            _ => w >= 0.0 && w.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "weight {w} is outside the domain of {}",
                self.name()
            )))
        }
    }

    /// Probability that a Bernoulli kind switches the atom on.
    fn on_probability(self, w: f64, f: f64) -> f64 {
        match self {
            TransformKind::BetaBernoulli => sigmoid(logit(w) + f),
            // w e^F / (1 + w e^F) = σ(log w + F)
            _ => sigmoid(w.ln() + f),
        }
    }

    /// `E[x | w, F]`.
    pub fn conditional_mean(self, w: f64, f: f64) -> f64 {
        match self {
            TransformKind::Identity => w,
            TransformKind::GammaExp => w * f.exp(),
            TransformKind::GammaSoftplus => w * softplus(f),
            TransformKind::BetaBernoulli | TransformKind::GammaBernoulli => self.on_probability(w, f),
        }
    }

    /// `E[e^{−r x} | w, F]`.
    pub fn conditional_laplace(self, w: f64, f: f64, r: f64) -> f64 {
        match self {
            TransformKind::Identity => (-r * w).exp(),
            TransformKind::GammaExp => (-w * (r * f.exp()).ln_1p()).exp(),
            TransformKind::GammaSoftplus => (-w * (r * softplus(f)).ln_1p()).exp(),
            TransformKind::BetaBernoulli | TransformKind::GammaBernoulli => {
                let p = self.on_probability(w, f);
                1.0 - p * (-(-r).exp_m1())
            }
        }
    }

    /// One draw of `x` given `w` and `F`.
    pub fn sample<R: Rng + ?Sized>(self, w: f64, f: f64, rng: &mut R) -> Result<f64> {
        self.check_weight(w)?;
        if w == 0.0 && self != TransformKind::BetaBernoulli {
            // an underflowed stick carries no mass
            return Ok(0.0);
        }
        match self {
            TransformKind::Identity => Ok(w),
            TransformKind::GammaExp => gamma(w, (-f).exp(), rng),
            TransformKind::GammaSoftplus => gamma(w, 1.0 / softplus(f), rng),
            TransformKind::BetaBernoulli | TransformKind::GammaBernoulli => {
                Ok(if bernoulli(self.on_probability(w, f), rng)? {
                    1.0
                } else {
                    0.0
                })
            }
        }
    }
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Draws `x_k ~ T(· | w_k, F_k)` independently.
pub fn transform_weights<R: Rng + ?Sized>(
    kind: TransformKind,
    weights: &[f64],
    gp_values: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if weights.len() != gp_values.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: gp_values.len(),
        });
    }
    weights
        .iter()
        .zip(gp_values)
        .map(|(&w, &f)| kind.sample(w, f, rng))
        .collect()
}

/// `Cov(X_i, X_j | tuples)` for the exponential gamma transform with a
/// linear kernel and constant mean `μ`: the covariance of the lognormal
/// conditional means `w e^{F}`, since the `x` are independent given `F`.
pub fn pairwise_covariance(w_i: f64, w_j: f64, l_i: &[f64], l_j: &[f64], mean: f64) -> Result<f64> {
    if l_i.len() != l_j.len() {
        return Err(Error::DimensionMismatch {
            expected: l_i.len(),
            got: l_j.len(),
        });
    }
    let ii = dot(l_i, l_i);
    let jj = dot(l_j, l_j);
    let ij = dot(l_i, l_j);
    Ok(w_i * w_j * (2.0 * mean + 0.5 * (ii + jj)).exp() * ij.exp_m1())
}

/// One realization: Gaussian-process values and transformed weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDraw {
    pub gp_values: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `x_k / Σ_j x_j`.
pub fn normalize_measure(x: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = x.iter().sum();
    if x.iter().any(|v| !(*v >= 0.0)) || !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate(
            "cannot normalize a measure with zero total mass".into(),
        ));
    }
    Ok(x.iter().map(|v| v / total).collect())
}

/// Realizations sharing `tuples`, realization `u` using mean `means[u]`.
pub fn sample_hierarchical<R: Rng + ?Sized>(
    tuples: &TupleSet,
    kind: TransformKind,
    means: &[f64],
    rng: &mut R,
) -> Result<Vec<MeasureDraw>> {
    means
        .iter()
        .map(|&mu| {
            let gp_values = gp_linear_draw(&tuples.locations, tuples.dim, mu, rng)?;
            let weights = transform_weights(kind, &tuples.weights, &gp_values, rng)?;
            Ok(MeasureDraw { gp_values, weights })
        })
        .collect()
}
