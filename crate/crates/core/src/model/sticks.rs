//! The scale, sticks and gamma-process hyperparameters, optimized on the ELBO
//! with every row's `q(x_ku)` held at its coordinate optimum.
//!
//! With `φ`, `g` and the atoms fixed, the optimal factor is
//! `q(x_ku) = Gamma(w_k + n_uk, r_uk + A_k)` where `n_uk = Σ_i y_ui φ_uik` and
//! `A_k = Σ_i E[a_ki]`. Substituting it leaves, up to constants,
//!
//! `Σ_k [w_k Σ_u log(r_uk / (r_uk + A_k)) + Σ_u (log Γ(w_k + n_uk) − log Γ(w_k))]`
//!
//! plus the log priors of `s`, `V`, `α` and `c`. At a point where the `q(x)`
//! are optimal its gradient equals the ELBO gradient; its curvature also
//! accounts for `q(x)` following the weights, so Newton steps on it shrink
//! unused components in a few iterations instead of hundreds.

use nalgebra::{DMatrix, DVector};

use super::global::RowStats;
use super::state::{stick_weights, GlobalState};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::mathfn::{digamma_unchecked, log_gamma_unchecked, trigamma_unchecked};
use crate::optim::Reparam;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
/// Largest change of an unconstrained coordinate in one Newton step, relative
/// to its magnitude when that exceeds one.
const MAX_STEP: f64 = 4.0;

/// Index of the scale, mass and rate in the parameter vector; sticks follow.
const S: usize = 0;
const A: usize = 1;
const C: usize = 2;
const V0: usize = 3;

/// `(s, α, c, V_1..V_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StickParams {
    pub scale: f64,
    pub alpha: f64,
    pub c: f64,
    pub sticks: Vec<f64>,
}

impl StickParams {
    pub fn from_state(state: &GlobalState) -> Self {
        StickParams {
            scale: state.scale,
            alpha: state.alpha,
            c: state.c,
            sticks: state.sticks.clone(),
        }
    }

    pub fn write_to(&self, state: &mut GlobalState) {
        state.scale = self.scale;
        state.alpha = self.alpha;
        state.c = self.c;
        state.sticks.copy_from_slice(&self.sticks);
    }

    /// `(softplus⁻¹ s, softplus⁻¹ α, softplus⁻¹ c, logit V_1, ..)`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut z = vec![
            Reparam::Positive.to_unconstrained(self.scale),
            Reparam::Positive.to_unconstrained(self.alpha),
            Reparam::Positive.to_unconstrained(self.c),
        ];
        z.extend(self.sticks.iter().map(|&v| Reparam::Unit.to_unconstrained(v)));
        z
    }

    pub fn from_unconstrained(z: &[f64]) -> Self {
        StickParams {
            scale: Reparam::Positive.from_unconstrained(z[S]),
            alpha: Reparam::Positive.from_unconstrained(z[A]),
            c: Reparam::Positive.from_unconstrained(z[C]),
            sticks: z[V0..]
                .iter()
                .map(|&y| Reparam::Unit.from_unconstrained(y))
                .collect(),
        }
    }

    fn as_vec(&self) -> Vec<f64> {
        let mut x = vec![self.scale, self.alpha, self.c];
        x.extend_from_slice(&self.sticks);
        x
    }
}

/// Per-component value and first two derivatives of the data part in `w_k`.
fn data_terms(stats: &RowStats, w: &[f64], order: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = w.len();
    let mut value = vec![0.0; t];
    let mut d1 = stats.log_ratio.clone();
    let mut d2 = vec![0.0; t];
    for k in 0..t {
        value[k] = w[k] * stats.log_ratio[k];
    }
    let lg: Vec<f64> = w.iter().map(|&x| log_gamma_unchecked(x)).collect();
    let dg: Vec<f64> = if order >= 1 {
        w.iter().map(|&x| digamma_unchecked(x)).collect()
    } else {
        Vec::new()
    };
    let tg: Vec<f64> = if order >= 2 {
        w.iter().map(|&x| trigamma_unchecked(x)).collect()
    } else {
        Vec::new()
    };
    let rw = stats.row_weight;
    for row in stats.row_counts.chunks(t) {
        for k in 0..t {
            let n = row[k];
            if n == 0.0 {
                continue;
            }
            let z = w[k] + n;
            value[k] += rw * (log_gamma_unchecked(z) - lg[k]);
            if order >= 1 {
                d1[k] += rw * (digamma_unchecked(z) - dg[k]);
            }
            if order >= 2 {
                d2[k] += rw * (trigamma_unchecked(z) - tg[k]);
            }
        }
    }
    (value, d1, d2)
}

/// Log priors of `α`, `c`, `s` and the sticks, without constants.
fn prior_value(cfg: &ModelConfig, p: &StickParams) -> f64 {
    let (s, a, c) = (p.scale, p.alpha, p.c);
    let t = p.sticks.len() as f64;
    let log_rest: f64 = p.sticks.iter().map(|v| (-v).ln_1p()).sum();
    (cfg.alpha_prior.shape - 1.0) * a.ln() - cfg.alpha_prior.rate * a + (cfg.c_prior.shape - 1.0) * c.ln()
        - cfg.c_prior.rate * c
        + a * c.ln()
        - log_gamma_unchecked(a)
        + (a - 1.0) * s.ln()
        - c * s
        + t * a.ln()
        + (a - 1.0) * log_rest
}

/// The profiled objective at `p`.
pub fn profiled_objective(cfg: &ModelConfig, stats: &RowStats, p: &StickParams) -> f64 {
    let w = stick_weights(p.scale, &p.sticks);
    let (value, _, _) = data_terms(stats, &w, 0);
    value.iter().sum::<f64>() + prior_value(cfg, p)
}

/// Value, gradient and Hessian of the profiled objective in the unconstrained
/// coordinates `(softplus⁻¹ s, softplus⁻¹ α, softplus⁻¹ c, logit V)`.
pub fn profiled_derivatives(
    cfg: &ModelConfig,
    stats: &RowStats,
    p: &StickParams,
) -> (f64, Vec<f64>, Vec<f64>) {
    let t = p.sticks.len();
    let n = V0 + t;
    let (s, a, c) = (p.scale, p.alpha, p.c);
    let v = &p.sticks;
    let w = stick_weights(s, v);
    let (value, d1, d2) = data_terms(stats, &w, 2);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];

    // data part: w_k is a product of s, V_k and the (1 − V_j), j < k, so with
    // b_k = ∇ log w_k, ∇w_k = w_k b_k and ∇²w_k = w_k (b_k b_kᵀ − diag(b_k²))
    let mut b = vec![0.0; n];
    let mut support = Vec::with_capacity(t + 1);
    for k in 0..t {
        support.clear();
        support.push(S);
        b[S] = 1.0 / s;
        for j in 0..k {
            b[V0 + j] = -1.0 / (1.0 - v[j]);
            support.push(V0 + j);
        }
        b[V0 + k] = 1.0 / v[k];
        support.push(V0 + k);
        let gw = d1[k] * w[k];
        let outer = d2[k] * w[k] * w[k] + gw;
        for &i in &support {
            grad[i] += gw * b[i];
            for &j in &support {
                hess[i * n + j] += outer * b[i] * b[j];
            }
            hess[i * n + i] -= gw * b[i] * b[i];
        }
    }

    // priors
    let log_rest: f64 = v.iter().map(|x| (-x).ln_1p()).sum();
    let (ka, kc) = (cfg.alpha_prior, cfg.c_prior);
    grad[S] += (a - 1.0) / s - c;
    grad[A] +=
        (ka.shape - 1.0) / a - ka.rate + c.ln() - digamma_unchecked(a) + s.ln() + t as f64 / a + log_rest;
    grad[C] += (kc.shape - 1.0) / c - kc.rate + a / c - s;
    hess[S * n + S] -= (a - 1.0) / (s * s);
    hess[S * n + A] += 1.0 / s;
    hess[A * n + S] += 1.0 / s;
    hess[S * n + C] -= 1.0;
    hess[C * n + S] -= 1.0;
    hess[A * n + A] -= (ka.shape - 1.0) / (a * a) + trigamma_unchecked(a) + t as f64 / (a * a);
    hess[A * n + C] += 1.0 / c;
    hess[C * n + A] += 1.0 / c;
    hess[C * n + C] -= (kc.shape - 1.0 + a) / (c * c);
    for k in 0..t {
        let q = 1.0 - v[k];
        grad[V0 + k] -= (a - 1.0) / q;
        hess[(V0 + k) * n + V0 + k] -= (a - 1.0) / (q * q);
        hess[A * n + V0 + k] -= 1.0 / q;
        hess[(V0 + k) * n + A] -= 1.0 / q;
    }

    // chain rule to unconstrained coordinates
    let x = p.as_vec();
    let mut jac = vec![0.0; n];
    let mut curv = vec![0.0; n];
    for i in 0..n {
        if i < V0 {
            // d softplus(z)/dz = σ(z) = 1 − e^{−softplus(z)}
            let sig = -(-x[i]).exp_m1();
            jac[i] = sig;
            curv[i] = sig * (1.0 - sig);
        } else {
            jac[i] = x[i] * (1.0 - x[i]);
            curv[i] = jac[i] * (1.0 - 2.0 * x[i]);
        }
    }
    for i in 0..n {
        for j in 0..n {
            hess[i * n + j] *= jac[i] * jac[j];
        }
        hess[i * n + i] += grad[i] * curv[i];
    }
    for i in 0..n {
        grad[i] *= jac[i];
    }
    (value.iter().sum::<f64>() + prior_value(cfg, p), grad, hess)
}

/// Damped Newton ascent on the profiled objective from `start`, with Armijo
/// backtracking. Returns the final parameters and the number of steps taken.
pub fn solve_sticks(
    cfg: &ModelConfig,
    stats: &RowStats,
    start: &StickParams,
    max_iters: usize,
) -> Result<(StickParams, usize)> {
    let n = V0 + start.sticks.len();
    let mut z = start.to_unconstrained();
    let mut current = StickParams::from_unconstrained(&z);
    let mut steps = 0;
    for _ in 0..max_iters {
        let (f, g, h) = profiled_derivatives(cfg, stats, &current);
        if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("stick objective".into()));
        }
        let grad = DVector::from_vec(g);
        let neg_h = -DMatrix::from_row_slice(n, n, &h);
        let scale = (0..n).map(|i| neg_h[(i, i)].abs()).fold(1e-12, f64::max);
        let mut damping = 0.0;
        let dir = loop {
            let mut m = neg_h.clone();
            for i in 0..n {
                m[(i, i)] += damping;
            }
            if let Some(chol) = m.cholesky() {
                break chol.solve(&grad);
            }
            damping = if damping == 0.0 {
                1e-10 * scale
            } else {
                damping * 10.0
            };
            if damping > 1e10 * scale {
                return Err(Error::Degenerate("stick Hessian could not be regularized".into()));
            }
        };
        let mut dir: Vec<f64> = dir.iter().copied().collect();
        // trust region relative to each coordinate's magnitude, so that large
        // scales can still double in one step
        let shrink = dir
            .iter()
            .zip(&z)
            .map(|(d, x)| MAX_STEP * x.abs().max(1.0) / d.abs())
            .fold(1.0f64, f64::min);
        dir.iter_mut().for_each(|d| *d *= shrink);
        let slope: f64 = dir.iter().zip(grad.iter()).map(|(d, g)| d * g).sum();
        // Newton decrement small relative to the objective: converged
        if slope <= 1e-10 * f.abs().max(1.0) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let cand = StickParams::from_unconstrained(&trial);
            let fc = profiled_objective(cfg, stats, &cand);
            if fc.is_finite() && fc >= f + ARMIJO * step * slope {
                accepted = Some((trial, cand));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, cand)) => {
                z = trial;
                current = cand;
                steps += 1;
            }
            None => break,
        }
    }
    Ok((current, steps))
}

/// Moves `current` a fraction `rho` of the way to `target` in the
/// unconstrained coordinates.
pub fn blend_sticks(current: &StickParams, target: &StickParams, rho: f64) -> StickParams {
    let a = current.to_unconstrained();
    let b = target.to_unconstrained();
    let z: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + rho * (y - x)).collect();
    StickParams::from_unconstrained(&z)
}
