//! The evidence lower bound, split into global terms and per-row terms.
//!
//! Point-estimated parameters contribute their log prior density only; the
//! entropy of a point mass is a constant and is dropped. Parameters removed by
//! the variant contribute nothing.

use super::local::{g_values, mean_log_x, mean_x};
use super::state::{GlobalView, LocalState};
use crate::data::{Row, SparseCountMatrix};
use crate::error::{Error, Result};
use crate::mathfn::{
    digamma_unchecked, log_factorial, log_gamma_density, log_gamma_unchecked, log_isotropic_normal_density,
    log_normal_density,
};

/// E_q[log p(z)] + H(q) for q = Gamma(q_shape, q_rate), p = Gamma(p_shape, p_rate).
///
/// Written as a negative KL divergence so that it stays accurate when both
/// shapes are tiny and `Ψ` is huge.
#[inline]
pub(crate) fn gamma_neg_kl(q_shape: f64, q_rate: f64, p_shape: f64, p_rate: f64, log_gamma_p: f64) -> f64 {
    p_shape * (p_rate / q_rate).ln() + log_gamma_unchecked(q_shape) - log_gamma_p
        + (p_shape - q_shape) * digamma_unchecked(q_shape)
        + q_shape * (1.0 - p_rate / q_rate)
}

fn finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(term.to_owned()))
    }
}

/// ELBO terms that do not involve any row: hyperpriors, the scale and stick
/// priors, location priors and the atom factors.
pub fn global_elbo(view: &GlobalView<'_>) -> Result<f64> {
    let cfg = view.config;
    let st = view.state;
    let mut total = log_gamma_density(st.alpha, cfg.alpha_prior.shape, cfg.alpha_prior.rate)
        + log_gamma_density(st.c, cfg.c_prior.shape, cfg.c_prior.rate)
        + log_gamma_density(st.scale, st.alpha, st.c);
    total = finite(total, "hyperparameter priors")?;

    let sticks: f64 = st
        .sticks
        .iter()
        .map(|&v| st.alpha.ln() + (st.alpha - 1.0) * (-v).ln_1p())
        .sum();
    total += finite(sticks, "stick priors")?;

    if cfg.variant.uses_locations() {
        let locs: f64 = (0..st.n_components)
            .map(|k| log_isotropic_normal_density(st.location(k), cfg.sigma_l2))
            .sum();
        total += finite(locs, "location priors")?;
    }

    let (p_shape, p_rate) = (cfg.atom_prior.shape, cfg.atom_prior.rate);
    let lg = log_gamma_unchecked(p_shape);
    let atoms: f64 = st
        .atom_shape
        .iter()
        .zip(&st.atom_rate)
        .map(|(&a, &b)| gamma_neg_kl(a, b, p_shape, p_rate, lg))
        .sum();
    total += finite(atoms, "atom factors")?;
    Ok(total)
}

/// ELBO terms owned by one row: priors on `d_u` and `μ_u`, the weight factors
/// `q(x_ku)`, and the Poisson likelihood with its auxiliary split.
pub fn row_elbo(local: &LocalState, view: &GlobalView<'_>, row: Row<'_>) -> Result<f64> {
    let t = view.n_components();
    let v = view.variant();
    let link = v.link();
    if local.phi.len() != row.nnz() * t {
        return Err(Error::DimensionMismatch {
            expected: row.nnz() * t,
            got: local.phi.len(),
        });
    }
    let mut total = 0.0;
    if v.uses_locations() {
        total += log_isotropic_normal_density(&local.d, 1.0);
    }
    if v.uses_row_mean() {
        total += log_normal_density(local.mu, view.config.sigma_m2);
    }
    total = finite(total, "row priors")?;

    let g = g_values(local, view);
    let ex = mean_x(local);
    let mlx = mean_log_x(local);
    let mut weights = 0.0;
    for k in 0..t {
        weights += gamma_neg_kl(
            local.x_shape[k],
            local.x_rate[k],
            view.cache.weights[k],
            link.rate(g[k]),
            view.cache.log_gamma_weights[k],
        );
    }
    total += finite(weights, "weight factors")?;

    let mut likelihood = 0.0;
    for (cell, (&col, &y)) in row.cols.iter().zip(row.counts).enumerate() {
        let la = &view.cache.atom_mean_log_t[col as usize * t..(col as usize + 1) * t];
        let phi = &local.phi[cell * t..(cell + 1) * t];
        let yf = f64::from(y);
        for k in 0..t {
            // φ log φ → 0 as φ → 0
            if phi[k] > 0.0 {
                likelihood += yf * phi[k] * (mlx[k] + la[k] - phi[k].ln());
            }
        }
        likelihood -= log_factorial(y);
    }
    for k in 0..t {
        likelihood -= ex[k] * view.cache.atom_totals[k];
    }
    total += finite(likelihood, "likelihood")?;
    Ok(total)
}

/// Full ELBO of `m` with one local state per row.
pub fn elbo(m: &SparseCountMatrix, view: &GlobalView<'_>, locals: &[LocalState]) -> Result<f64> {
    if locals.len() != m.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: m.n_rows(),
            got: locals.len(),
        });
    }
    if m.n_cols() != view.state.n_cols {
        return Err(Error::DimensionMismatch {
            expected: view.state.n_cols,
            got: m.n_cols(),
        });
    }
    let mut total = global_elbo(view)?;
    for (u, local) in locals.iter().enumerate() {
        total += row_elbo(local, view, m.row(u))?;
    }
    Ok(total)
}
