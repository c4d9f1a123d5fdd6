//! Gradients of the ELBO in the global parameters.
//!
//! Rows enter only through additive sufficient statistics ([`RowStats`]), so
//! the batch gradient, a minibatch gradient (statistics scaled by
//! `U / |batch|`) and a parallel reduction all share one code path.

use super::local::{g_values, mean_log_x, mean_x, phi_counts};
use super::state::{GlobalView, LocalState};
use crate::data::Row;
use crate::error::Result;
use crate::mathfn::{digamma_unchecked, softplus};

/// Additive per-row statistics needed by the global gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    /// Number of rows summarized (after any scaling).
    pub n_rows: f64,
    /// Σ_u y_ui φ_uik, component-major.
    pub atom_counts: Vec<f64>,
    /// Σ_u E[x_ku].
    pub x_mean: Vec<f64>,
    /// Σ_u (log rate(g_uk) + E[log x_ku]).
    pub weight_stat: Vec<f64>,
    /// Σ_u ψ'(g_uk) d_u, component-major with `dim` columns. Empty when the
    /// variant has no locations.
    pub loc_grad: Vec<f64>,
    /// Σ_u ψ''(g_uk) d_u d_uᵀ, one `dim × dim` block per component.
    pub loc_hess: Vec<f64>,
    /// Σ_u log(r_uk / (r_uk + Σ_i E[a_ki])) with `r` the current rate.
    pub log_ratio: Vec<f64>,
    /// Σ_i y_ui φ_uik for every nonempty row, `T` values per row in row order.
    pub row_counts: Vec<f64>,
    /// Multiplicity of each row in `row_counts` (the minibatch scaling).
    pub row_weight: f64,
    /// Σ_u of the rows' ELBO terms, when requested.
    pub elbo: f64,
    /// Nonzero cells visited; the cost of a pass scales with this count.
    pub cell_visits: u64,
}

impl RowStats {
    pub fn new(view: &GlobalView<'_>) -> Self {
        let t = view.n_components();
        let dim = view.state.dim;
        let with_locs = view.variant().uses_locations();
        RowStats {
            n_rows: 0.0,
            atom_counts: vec![0.0; t * view.state.n_cols],
            x_mean: vec![0.0; t],
            weight_stat: vec![0.0; t],
            loc_grad: if with_locs { vec![0.0; t * dim] } else { Vec::new() },
            loc_hess: if with_locs {
                vec![0.0; t * dim * dim]
            } else {
                Vec::new()
            },
            log_ratio: vec![0.0; t],
            row_counts: Vec::new(),
            row_weight: 1.0,
            elbo: 0.0,
            cell_visits: 0,
        }
    }

    /// Adds one row. With `with_elbo`, the row's ELBO terms are accumulated too.
    pub fn add_row(
        &mut self,
        local: &LocalState,
        view: &GlobalView<'_>,
        row: Row<'_>,
        with_elbo: bool,
    ) -> Result<()> {
        let t = view.n_components();
        let n = view.state.n_cols;
        let dim = view.state.dim;
        let link = view.variant().link();
        self.n_rows += 1.0;
        for (cell, &col) in row.cols.iter().enumerate() {
            let y = f64::from(row.counts[cell]);
            let phi = &local.phi[cell * t..(cell + 1) * t];
            for k in 0..t {
                self.atom_counts[k * n + col as usize] += y * phi[k];
            }
        }
        self.cell_visits += row.nnz() as u64;
        let g = g_values(local, view);
        let ex = mean_x(local);
        let mlx = mean_log_x(local);
        for k in 0..t {
            let log_rate = link.log_rate(g[k]);
            self.x_mean[k] += ex[k];
            self.weight_stat[k] += log_rate + mlx[k];
            self.log_ratio[k] -= softplus(view.cache.atom_totals[k].ln() - log_rate);
        }
        if !row.is_empty() {
            self.row_counts.extend(phi_counts(local, row, t));
        }
        if !self.loc_grad.is_empty() {
            for k in 0..t {
                let terms = link.terms(g[k], view.cache.weights[k], ex[k]);
                let grad = &mut self.loc_grad[k * dim..(k + 1) * dim];
                for (acc, d) in grad.iter_mut().zip(&local.d) {
                    *acc += terms.d1 * d;
                }
                let hess = &mut self.loc_hess[k * dim * dim..(k + 1) * dim * dim];
                for a in 0..dim {
                    let da = terms.d2 * local.d[a];
                    for b in 0..dim {
                        hess[a * dim + b] += da * local.d[b];
                    }
                }
            }
        }
        if with_elbo {
            self.elbo += super::row_elbo(local, view, row)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &RowStats) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.n_rows += other.n_rows;
        add(&mut self.atom_counts, &other.atom_counts);
        add(&mut self.x_mean, &other.x_mean);
        add(&mut self.weight_stat, &other.weight_stat);
        add(&mut self.loc_grad, &other.loc_grad);
        add(&mut self.loc_hess, &other.loc_hess);
        add(&mut self.log_ratio, &other.log_ratio);
        debug_assert_eq!(self.row_weight, other.row_weight);
        self.row_counts.extend_from_slice(&other.row_counts);
        self.elbo += other.elbo;
        self.cell_visits += other.cell_visits;
    }

    /// Multiplies every statistic by `factor` (minibatch rescaling).
    pub fn scale(&mut self, factor: f64) {
        self.n_rows *= factor;
        for v in self
            .atom_counts
            .iter_mut()
            .chain(&mut self.x_mean)
            .chain(&mut self.weight_stat)
            .chain(&mut self.loc_grad)
            .chain(&mut self.loc_hess)
            .chain(&mut self.log_ratio)
        {
            *v *= factor;
        }
        self.row_weight *= factor;
        self.elbo *= factor;
    }
}

/// Gradients of the ELBO in the unconstrained global parameters, plus the
/// coordinate-optimal targets for the atom factors.
///
/// Positive parameters (`scale`, `alpha`, `c`) are differentiated with respect
/// to `z` where the parameter equals `softplus(z)`; sticks with respect to
/// `logit(V)`. Locations are unconstrained already.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGradient {
    pub scale: f64,
    pub sticks: Vec<f64>,
    pub alpha: f64,
    pub c: f64,
    /// Zero when the variant has no locations.
    pub locations: Vec<f64>,
    /// One `dim × dim` block per component; zero when the variant has no locations.
    pub location_hessian: Vec<f64>,
    /// Optimal atom shapes `α_h + Σ_u y φ`, component-major.
    pub atom_shape_target: Vec<f64>,
    /// Optimal atom rates `β_h + Σ_u E[x_ku]`, identical across columns.
    pub atom_rate_target: Vec<f64>,
    /// ∂L/∂w_k summed over rows.
    pub weight_derivative: Vec<f64>,
}

impl GlobalGradient {
    /// Natural gradient of the atom factors: target minus current parameters,
    /// so a unit step lands on the coordinate optimum.
    pub fn atom_natural_gradient(&self, view: &GlobalView<'_>) -> (Vec<f64>, Vec<f64>) {
        let n = view.state.n_cols;
        let shape = self
            .atom_shape_target
            .iter()
            .zip(&view.state.atom_shape)
            .map(|(t, c)| t - c)
            .collect();
        let rate = view
            .state
            .atom_rate
            .iter()
            .enumerate()
            .map(|(j, c)| self.atom_rate_target[j / n] - c)
            .collect();
        (shape, rate)
    }
}

/// Assembles the global gradient from row statistics. For a minibatch, scale
/// `stats` by `U / |batch|` first.
pub fn global_gradient(view: &GlobalView<'_>, stats: &RowStats) -> GlobalGradient {
    let cfg = view.config;
    let st = view.state;
    let t = st.n_components;
    let dim = st.dim;
    let w = &view.cache.weights;
    let (alpha, c, s) = (st.alpha, st.c, st.scale);

    // ∂L/∂w_k: Σ_u (log rate + E[log x]) − U Ψ(w_k)
    let dw: Vec<f64> = (0..t)
        .map(|k| stats.weight_stat[k] - stats.n_rows * view.cache.digamma_weights[k])
        .collect();
    let dw_w: Vec<f64> = dw.iter().zip(w).map(|(d, w)| d * w).collect();

    // prior terms are differentiated exactly, e.g. (α − 1)/s − c for the scale
    let d_scale = (alpha - 1.0) / s - c + dw_w.iter().sum::<f64>() / s;

    let mut tail = 0.0;
    let mut d_sticks = vec![0.0; t];
    for k in (0..t).rev() {
        let v = st.sticks[k];
        d_sticks[k] = -(alpha - 1.0) / (1.0 - v) + dw_w[k] / v - tail / (1.0 - v);
        tail += dw_w[k];
    }

    let log_rest: f64 = st.sticks.iter().map(|v| (-v).ln_1p()).sum();
    let d_alpha = (cfg.alpha_prior.shape - 1.0) / alpha - cfg.alpha_prior.rate + c.ln()
        - digamma_unchecked(alpha)
        + s.ln()
        + t as f64 / alpha
        + log_rest;
    let d_c = (cfg.c_prior.shape - 1.0) / c - cfg.c_prior.rate + alpha / c - s;

    // chain rule to the unconstrained coordinates
    let softplus_jacobian = |x: f64| -(-x).exp_m1();
    let scale = d_scale * softplus_jacobian(s);
    let alpha_u = d_alpha * softplus_jacobian(alpha);
    let c_u = d_c * softplus_jacobian(c);
    let sticks = d_sticks
        .iter()
        .zip(&st.sticks)
        .map(|(d, v)| d * v * (1.0 - v))
        .collect();

    let mut locations = vec![0.0; t * dim];
    let mut location_hessian = vec![0.0; t * dim * dim];
    if cfg.variant.uses_locations() {
        for j in 0..t * dim {
            locations[j] = -st.locations[j] / cfg.sigma_l2 + stats.loc_grad[j];
        }
        for k in 0..t {
            let block = &mut location_hessian[k * dim * dim..(k + 1) * dim * dim];
            block.copy_from_slice(&stats.loc_hess[k * dim * dim..(k + 1) * dim * dim]);
            for a in 0..dim {
                block[a * dim + a] -= 1.0 / cfg.sigma_l2;
            }
        }
    }

    let atom_shape_target = stats
        .atom_counts
        .iter()
        .map(|c| cfg.atom_prior.shape + c)
        .collect();
    let atom_rate_target = stats.x_mean.iter().map(|x| cfg.atom_prior.rate + x).collect();

    GlobalGradient {
        scale,
        sticks,
        alpha: alpha_u,
        c: c_u,
        locations,
        location_hessian,
        atom_shape_target,
        atom_rate_target,
        weight_derivative: dw,
    }
}
