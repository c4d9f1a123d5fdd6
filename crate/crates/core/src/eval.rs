//! Held-out perplexity, predictive column distributions, exports of a fitted
//! state, and synthetic data drawn from the generative model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{HeldOutSplit, SparseCountMatrix};
use crate::error::{Error, Result};
use crate::infer::{optimize_local, LocalSettings};
use crate::mathfn::sample::{gamma, normal, poisson, stream_rng};
use crate::mathfn::{dot, GammaParams};
use crate::model::{GlobalState, GlobalView, LocalState, ModelConfig, Variant};
use crate::rmgen::{self, TransformKind};

/// Components whose stick weight is below this fraction of the total mass
/// are treated as unused in exports.
pub const ACTIVE_FRACTION: f64 = 1e-4;

/// Fraction of total stick mass covered by the effective component count.
pub const EFFECTIVE_MASS: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub n_test_events: u64,
    pub n_heldout_rows: usize,
    /// Held-out rows scored from a prior-only fit because their observed
    /// part is empty.
    pub n_rows_with_empty_obs: usize,
}

/// `p(j) ∝ Σ_k E[x_k] E[a_kj]`, with `atom_mean` component-major over
/// `n_cols` columns.
pub fn predict_column_distribution(mean_x: &[f64], atom_mean: &[f64], n_cols: usize) -> Result<Vec<f64>> {
    if atom_mean.len() != mean_x.len() * n_cols {
        return Err(Error::DimensionMismatch {
            expected: mean_x.len() * n_cols,
            got: atom_mean.len(),
        });
    }
    let mut rates = vec![0.0; n_cols];
    for (k, &x) in mean_x.iter().enumerate() {
        for (r, a) in rates.iter_mut().zip(&atom_mean[k * n_cols..(k + 1) * n_cols]) {
            *r += x * a;
        }
    }
    let total: f64 = rates.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate("predictive rates are all zero".into()));
    }
    rates.iter_mut().for_each(|r| *r /= total);
    Ok(rates)
}

/// `exp(−Σ log p / n_events)`; each event is one unit of a test count.
pub fn perplexity_from_log_prob(total_log_prob: f64, n_events: u64) -> Result<f64> {
    if n_events == 0 {
        return Err(Error::invalid("no test events to score"));
    }
    Ok((-total_log_prob / n_events as f64).exp())
}

/// Fits each held-out row on its observed part with the global state frozen,
/// then scores the test part under the predictive column distribution.
/// The refit only ever sees `obs`.
pub fn evaluate_perplexity(
    obs: &SparseCountMatrix,
    test: &SparseCountMatrix,
    view: &GlobalView<'_>,
    settings: &LocalSettings,
) -> Result<PerplexityReport> {
    if obs.n_rows() != test.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: obs.n_rows(),
            got: test.n_rows(),
        });
    }
    for n in [obs.n_cols(), test.n_cols()] {
        if n != view.state.n_cols {
            return Err(Error::DimensionMismatch {
                expected: view.state.n_cols,
                got: n,
            });
        }
    }
    let t = view.n_components();
    let scored: Vec<(f64, u64)> = (0..obs.n_rows())
        .into_par_iter()
        .map(|u| {
            let row = obs.row(u);
            let mut local = LocalState::prior(view);
            optimize_local(&mut local, view, row, settings)
                .map_err(|e| Error::Degenerate(format!("held-out row {u}: {e}")))?;
            let ex: Vec<f64> = (0..t).map(|k| local.x_shape[k] / local.x_rate[k]).collect();
            let norm: f64 = ex.iter().zip(&view.cache.atom_totals).map(|(x, a)| x * a).sum();
            let log_norm = norm.ln();
            let test_row = test.row(u);
            let mut log_prob = 0.0;
            for (&col, &y) in test_row.cols.iter().zip(test_row.counts) {
                let i = col as usize;
                let rate: f64 = (0..t)
                    .map(|k| ex[k] * view.cache.atom_mean[k * view.state.n_cols + i])
                    .sum();
                log_prob += f64::from(y) * (rate.ln() - log_norm);
            }
            Ok((log_prob, test_row.total()))
        })
        .collect::<Result<_>>()?;
    let total_log_prob: f64 = scored.iter().map(|s| s.0).sum();
    let n_test_events: u64 = scored.iter().map(|s| s.1).sum();
    if !total_log_prob.is_finite() {
        return Err(Error::NonFinite("held-out log probability".into()));
    }
    Ok(PerplexityReport {
        perplexity: perplexity_from_log_prob(total_log_prob, n_test_events)?,
        n_test_events,
        n_heldout_rows: obs.n_rows(),
        n_rows_with_empty_obs: (0..obs.n_rows()).filter(|&u| obs.row(u).is_empty()).count(),
    })
}

/// [`evaluate_perplexity`] on the held-out part of a split.
pub fn evaluate_split(
    split: &HeldOutSplit,
    config: &ModelConfig,
    global: &GlobalState,
    settings: &LocalSettings,
) -> Result<PerplexityReport> {
    global.check_config(config)?;
    let view = GlobalView::new(config, global);
    evaluate_perplexity(&split.heldout_obs, &split.heldout_test, &view, settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEdge {
    pub k: usize,
    pub m: usize,
    pub rho: f64,
}

/// Cosine similarity of two locations; `None` when either has zero norm.
pub fn location_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Signed correlation edges `k < m` among `components` with `|ρ| ≥ threshold`.
/// Components with a zero location are skipped.
pub fn component_correlations(
    global: &GlobalState,
    variant: Variant,
    components: &[usize],
    threshold: f64,
) -> Result<Vec<CorrelationEdge>> {
    if !variant.uses_locations() {
        return Err(Error::Unsupported(format!(
            "variant {variant} has no locations, so no component correlations"
        )));
    }
    let usable: Vec<usize> = components
        .iter()
        .copied()
        .filter(|&k| {
            let ok = dot(global.location(k), global.location(k)) > 0.0;
            if !ok {
                log::warn!("component {k} has a zero location; excluded from correlations");
            }
            ok
        })
        .collect();
    let mut edges = Vec::new();
    for (a, &k) in usable.iter().enumerate() {
        for &m in &usable[a + 1..] {
            if let Some(rho) = location_correlation(global.location(k), global.location(m)) {
                if rho.abs() >= threshold {
                    edges.push(CorrelationEdge { k, m, rho });
                }
            }
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickExport {
    /// `(k, w_k)` sorted by decreasing weight, ties by lower index.
    pub sticks: Vec<(usize, f64)>,
    pub total: f64,
    /// Smallest number of largest weights holding 99% of the total.
    pub effective_count: usize,
}

pub fn export_sticks(global: &GlobalState) -> StickExport {
    let mut sticks: Vec<(usize, f64)> = global.weights().into_iter().enumerate().collect();
    sticks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: f64 = sticks.iter().map(|s| s.1).sum();
    let mut acc = 0.0;
    let mut effective_count = sticks.len();
    for (n, s) in sticks.iter().enumerate() {
        acc += s.1;
        if acc >= EFFECTIVE_MASS * total {
            effective_count = n + 1;
            break;
        }
    }
    StickExport {
        sticks,
        total,
        effective_count,
    }
}

/// Components holding more than [`ACTIVE_FRACTION`] of the stick mass, in
/// index order.
pub fn active_components(global: &GlobalState) -> Vec<usize> {
    let w = global.weights();
    let total: f64 = w.iter().sum();
    (0..w.len()).filter(|&k| w[k] > ACTIVE_FRACTION * total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopColumn {
    pub k: usize,
    pub rank: usize,
    pub col: usize,
    pub mean_weight: f64,
}

/// For each listed component, the `top_n` columns with the largest `E[a_kj]`
/// (ties broken by lower column index). `top_n` is clamped to the column count.
pub fn export_components(global: &GlobalState, components: &[usize], top_n: usize) -> Vec<TopColumn> {
    let n = global.n_cols;
    let top_n = top_n.min(n);
    let mut out = Vec::with_capacity(components.len() * top_n);
    for &k in components {
        let means: Vec<f64> = (0..n)
            .map(|i| global.atom_shape[k * n + i] / global.atom_rate[k * n + i])
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
        for (rank, &col) in order.iter().take(top_n).enumerate() {
            out.push(TopColumn {
                k,
                rank,
                col,
                mean_weight: means[col],
            });
        }
    }
    out
}

/// Settings for drawing a count matrix from the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_components: usize,
    pub dim: usize,
    pub sigma_l2: f64,
    /// Variance of the per-row mean `μ_u`.
    pub sigma_m2: f64,
    /// Gamma-process mass and rate for the stick weights.
    pub alpha: f64,
    pub c: f64,
    /// Law of each atom entry `a_kj`.
    pub atom: GammaParams,
    /// Draw locations (true) or fix them at zero (uncorrelated weights).
    pub correlated: bool,
    pub allow_divergent_prior: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_rows: 2000,
            n_cols: 300,
            n_components: 15,
            dim: 5,
            sigma_l2: 0.8,
            sigma_m2: 1.0,
            alpha: 5.0,
            c: 1.0,
            atom: GammaParams {
                shape: 0.1,
                rate: 30.0,
            },
            correlated: true,
            allow_divergent_prior: false,
        }
    }
}

/// Parameters the synthetic matrix was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub weights: Vec<f64>,
    /// Component-major, `dim` columns.
    pub locations: Vec<f64>,
    /// Component-major, `n_cols` columns.
    pub atoms: Vec<f64>,
    /// `x_uk`, row-major.
    pub row_weights: Vec<f64>,
    /// Location correlations, `n_components × n_components`; zero where a
    /// location is zero.
    pub correlation: Vec<f64>,
}

/// Draws tuples, per-row Gaussian-process values and gamma weights with the
/// exponential link, then `y_uj ~ Poisson(Σ_k x_uk a_kj)`.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(SparseCountMatrix, SyntheticTruth)> {
    let t = config.n_components;
    let n = config.n_cols;
    if t == 0 || n == 0 {
        return Err(Error::invalid("synthetic data needs components and columns"));
    }
    if config.correlated && config.sigma_l2 >= 1.0 && !config.allow_divergent_prior {
        return Err(Error::invalid(format!(
            "sigma_l2 = {} >= 1 gives weights with infinite expected mass",
            config.sigma_l2
        )));
    }
    config.atom.validate()?;
    let mut rng = stream_rng(seed, 0x3000);
    let sigma_l2 = if config.correlated { config.sigma_l2 } else { 0.0 };
    let tuples = rmgen::sample_gamma_process_tuples(
        &rmgen::TupleSpec {
            alpha: config.alpha,
            c: config.c,
            truncation: t,
            dim: config.dim,
            sigma_l2,
        },
        &mut rng,
    )?;
    let mut atoms = Vec::with_capacity(t * n);
    for _ in 0..t * n {
        atoms.push(gamma(config.atom.shape, config.atom.rate, &mut rng)?);
    }
    let mean_sd = config.sigma_m2.sqrt();

    let mut row_weights = Vec::with_capacity(config.n_rows * t);
    let mut triplets = Vec::new();
    let mut rates = vec![0.0; n];
    for u in 0..config.n_rows {
        let mut row_rng = stream_rng(seed, 0x10_0000 + u as u64);
        let mu = normal(0.0, mean_sd, &mut row_rng)?;
        let gp = rmgen::gp_linear_draw(&tuples.locations, config.dim, mu, &mut row_rng)?;
        let x = rmgen::transform_weights(TransformKind::GammaExp, &tuples.weights, &gp, &mut row_rng)?;
        rates.iter_mut().for_each(|r| *r = 0.0);
        for (k, xk) in x.iter().enumerate() {
            for (r, a) in rates.iter_mut().zip(&atoms[k * n..(k + 1) * n]) {
                *r += xk * a;
            }
        }
        for (j, &r) in rates.iter().enumerate() {
            let y = poisson(r, &mut row_rng)?;
            if y > 0 {
                let y = u32::try_from(y).map_err(|_| Error::invalid("synthetic count overflow"))?;
                triplets.push((u, j, y));
            }
        }
        row_weights.extend(x);
    }
    let matrix = SparseCountMatrix::from_triplets(config.n_rows, n, triplets)?;

    let mut correlation = vec![0.0; t * t];
    for k in 0..t {
        for m in 0..t {
            let lk = &tuples.locations[k * config.dim..(k + 1) * config.dim];
            let lm = &tuples.locations[m * config.dim..(m + 1) * config.dim];
            correlation[k * t + m] = location_correlation(lk, lm).unwrap_or(0.0);
        }
    }
    Ok((
        matrix,
        SyntheticTruth {
            weights: tuples.weights,
            locations: tuples.locations,
            atoms,
            row_weights,
            correlation,
        },
    ))
}
