//! Monte Carlo checks of the Laplace functional, the pairwise covariance and
//! the finiteness of correlated random measures.
//!
//! Every draw uses its own `(seed, index)` stream, so the parallel loops give
//! the same numbers for any number of threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gp_linear_draw, sample_gamma_process_tuples, TransformKind, TupleSpec};
use crate::error::{Error, Result};
use crate::mathfn::sample::{normal, normal_vec, stream_rng};
use crate::mathfn::{dot, softplus};

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

impl McEstimate {
    fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        McEstimate {
            estimate: mean,
            stderr: (var / n).sqrt(),
        }
    }

    /// Whether `target` lies within `n_se` standard errors.
    pub fn agrees_with(&self, target: f64, n_se: f64) -> bool {
        (self.estimate - target).abs() <= n_se * self.stderr
    }
}

fn check_draws(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("Monte Carlo checks need at least two draws"));
    }
    Ok(())
}

/// Covariance of `X_i` and `X_j` over draws of the Gaussian process and the
/// transformed weights, with tuples held fixed.
#[allow(clippy::too_many_arguments)]
pub fn mc_pairwise_covariance(
    kind: TransformKind,
    w_i: f64,
    w_j: f64,
    l_i: &[f64],
    l_j: &[f64],
    mean: f64,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_draws(n_draws)?;
    if l_i.len() != l_j.len() {
        return Err(Error::DimensionMismatch {
            expected: l_i.len(),
            got: l_j.len(),
        });
    }
    let dim = l_i.len();
    let mut locs = l_i.to_vec();
    locs.extend_from_slice(l_j);
    let pairs: Vec<(f64, f64)> = (0..n_draws)
        .into_par_iter()
        .map(|n| {
            let mut rng = stream_rng(seed, n as u64);
            let f = gp_linear_draw(&locs, dim, mean, &mut rng)?;
            Ok((
                kind.sample(w_i, f[0], &mut rng)?,
                kind.sample(w_j, f[1], &mut rng)?,
            ))
        })
        .collect::<Result<_>>()?;
    let n = n_draws as f64;
    let mi = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mj = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let products: Vec<f64> = pairs.iter().map(|p| (p.0 - mi) * (p.1 - mj)).collect();
    let est = McEstimate::from_samples(&products);
    Ok(McEstimate {
        estimate: est.estimate * n / (n - 1.0),
        stderr: est.stderr,
    })
}

/// Settings for the Laplace-functional check with a constant test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceSpec {
    /// Base-measure mass `H(E)`, the gamma-process mass.
    pub mass: f64,
    pub c: f64,
    pub r: f64,
    pub truncation: usize,
    pub n_draws: usize,
    pub dim: usize,
    pub sigma_l2: f64,
    /// Constant Gaussian-process mean.
    pub mean: f64,
}

impl Default for LaplaceSpec {
    fn default() -> Self {
        LaplaceSpec {
            mass: 1.0,
            c: 1.0,
            r: 1.0,
            truncation: 100,
            n_draws: 100_000,
            dim: 2,
            sigma_l2: 0.1,
            mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCheck {
    /// Direct simulation of `E[e^{−r M(E)}]`.
    pub mc_estimate: f64,
    /// Analytic value for the plain gamma process, otherwise the conditional
    /// form `E_F[Π_k E[e^{−r x_k} | w_k, F]]` on the same draws.
    pub reference: f64,
    /// Standard error of `mc_estimate − reference`.
    pub stderr: f64,
    pub analytic: bool,
}

impl LaplaceCheck {
    pub fn passes(&self, n_se: f64) -> bool {
        let gap = (self.mc_estimate - self.reference).abs();
        if self.stderr == 0.0 {
            gap <= 1e-12
        } else {
            gap <= n_se * self.stderr
        }
    }
}

/// Estimates the Laplace functional `E[e^{−r M(E)}]` by direct simulation and
/// compares it with the form obtained by conditioning on the Gaussian process.
pub fn mc_laplace_check(spec: &LaplaceSpec, kind: TransformKind, seed: u64) -> Result<LaplaceCheck> {
    check_draws(spec.n_draws)?;
    if !(spec.r >= 0.0 && spec.r.is_finite()) {
        return Err(Error::invalid(format!("r must be nonnegative, got {}", spec.r)));
    }
    let tuple_spec = TupleSpec {
        alpha: spec.mass,
        c: spec.c,
        truncation: spec.truncation,
        dim: spec.dim,
        sigma_l2: spec.sigma_l2,
    };
    let draws: Vec<(f64, f64)> = (0..spec.n_draws)
        .into_par_iter()
        .map(|n| {
            let mut rng = stream_rng(seed, n as u64);
            let tuples = sample_gamma_process_tuples(&tuple_spec, &mut rng)?;
            let f = gp_linear_draw(&tuples.locations, spec.dim, spec.mean, &mut rng)?;
            let mut mass = 0.0;
            let mut conditional = 1.0;
            for (&w, &fk) in tuples.weights.iter().zip(&f) {
                mass += kind.sample(w, fk, &mut rng)?;
                conditional *= kind.conditional_laplace(w, fk, spec.r);
            }
            Ok(((-spec.r * mass).exp(), conditional))
        })
        .collect::<Result<_>>()?;
    let direct: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let direct_est = McEstimate::from_samples(&direct);
    if kind == TransformKind::Identity {
        return Ok(LaplaceCheck {
            mc_estimate: direct_est.estimate,
            reference: (1.0 + spec.r / spec.c).powf(-spec.mass),
            stderr: direct_est.stderr,
            analytic: true,
        });
    }
    let conditional: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let diff: Vec<f64> = draws.iter().map(|d| d.0 - d.1).collect();
    Ok(LaplaceCheck {
        mc_estimate: direct_est.estimate,
        reference: McEstimate::from_samples(&conditional).estimate,
        stderr: McEstimate::from_samples(&diff).stderr,
        analytic: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FinitenessStatus {
    Convergent,
    Divergent,
}

impl std::fmt::Display for FinitenessStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FinitenessStatus::Convergent => "CONVERGENT",
            FinitenessStatus::Divergent => "DIVERGENT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitenessSpec {
    pub kind: TransformKind,
    pub sigma_l2: f64,
    /// Increasing truncation levels.
    pub truncations: Vec<usize>,
    pub alpha: f64,
    pub c: f64,
    pub dim: usize,
    /// Constant Gaussian-process mean.
    pub mean: f64,
    /// Location draws per atom.
    pub draws_per_atom: usize,
    /// Increments may shrink by less than this factor while they stay above
    /// `noise_floor` of the estimate.
    pub decay: f64,
    pub noise_floor: f64,
}

impl Default for FinitenessSpec {
    fn default() -> Self {
        FinitenessSpec {
            kind: TransformKind::GammaExp,
            sigma_l2: 1.0 / 250.0,
            truncations: vec![25, 50, 100, 200, 400, 800, 1600],
            alpha: 1.0,
            c: 1.0,
            dim: 5,
            mean: 0.0,
            draws_per_atom: 1000,
            decay: 0.9,
            noise_floor: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitenessReport {
    pub truncations: Vec<usize>,
    /// Estimated `E[Σ_{k≤T} x_k]` at each truncation.
    pub estimates: Vec<f64>,
    pub increments: Vec<f64>,
    pub status: FinitenessStatus,
}

/// Tracks the expected total mass `E[Σ_{k≤T} x_k]` as the truncation grows.
///
/// By Tonelli's theorem the expectation factors into the expected stick mass
/// `E[Σ_{k≤T} w_k] = (α/c)(1 − (α/(1+α))^T)` and a per-atom factor
/// `κ = E[E[x | w, F] / w]` over locations and the Gaussian process
/// (`e^{μ + |ℓ|²/2}` for the exponential transforms, which also bounds the
/// Bernoulli kinds; `softplus(F)` sampled for the softplus transform).
/// The estimate at truncation `T` pairs the exact stick mass with the running
/// mean of `κ` over the first `T × draws_per_atom` location draws. A finite
/// `κ` makes the increments decay geometrically down to sampling noise; an
/// infinite `κ` makes the running mean, and so the estimate, keep growing.
pub fn mc_finiteness_check(spec: &FinitenessSpec, seed: u64) -> Result<FinitenessReport> {
    let ts = &spec.truncations;
    if ts.is_empty() || ts.windows(2).any(|p| p[1] <= p[0]) || ts[0] == 0 {
        return Err(Error::invalid(
            "truncations must be positive and strictly increasing",
        ));
    }
    if spec.draws_per_atom == 0 || spec.dim == 0 {
        return Err(Error::invalid("draws_per_atom and dim must be positive"));
    }
    if !(spec.alpha > 0.0 && spec.c > 0.0 && spec.sigma_l2 >= 0.0) {
        return Err(Error::invalid("finiteness check needs α, c > 0 and σ_l² ≥ 0"));
    }
    let t_max = *ts.last().unwrap_or(&0);
    let sd = spec.sigma_l2.sqrt();
    // one stream per atom keeps the nested running means reproducible
    let atom_sums: Vec<f64> = (0..t_max)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let mut sum = 0.0;
            for _ in 0..spec.draws_per_atom {
                let l = normal_vec(spec.dim, sd, &mut rng)?;
                let sq = dot(&l, &l);
                sum += match spec.kind {
                    TransformKind::Identity => 1.0,
                    TransformKind::GammaSoftplus => softplus(normal(spec.mean, sq.sqrt(), &mut rng)?),
                    _ => (spec.mean + 0.5 * sq).exp(),
                };
            }
            Ok(sum)
        })
        .collect::<Result<_>>()?;
    let q = spec.alpha / (1.0 + spec.alpha);
    let mut estimates = Vec::with_capacity(ts.len());
    let mut acc = 0.0;
    let mut done = 0;
    for &t in ts {
        acc += atom_sums[done..t].iter().sum::<f64>();
        done = t;
        let kappa = acc / (t * spec.draws_per_atom) as f64;
        let stick_mass = spec.alpha / spec.c * (1.0 - q.powi(t as i32));
        estimates.push(stick_mass * kappa);
    }
    let mut increments = Vec::with_capacity(ts.len());
    let mut prev = 0.0;
    for &e in &estimates {
        increments.push(e - prev);
        prev = e;
    }
    let mut status = FinitenessStatus::Convergent;
    for j in 1..increments.len() {
        let allowed = (spec.decay * increments[j - 1].abs()).max(spec.noise_floor * estimates[j].abs());
        if !estimates[j].is_finite() || increments[j] > allowed {
            status = FinitenessStatus::Divergent;
        }
    }
    Ok(FinitenessReport {
        truncations: ts.clone(),
        estimates,
        increments,
        status,
    })
}
