use serde::{Deserialize, Serialize};

use super::{ModelConfig, Variant};
use crate::data::SparseCountMatrix;
use crate::error::{Error, Result};
use crate::mathfn::sample::{normal_vec, stream_rng};
use crate::mathfn::{digamma_unchecked, log_gamma_unchecked};

use rand::Rng;

/// Smallest stick weight used anywhere; keeps `log Γ(w)` and `Ψ(w)` finite
/// when a stick product underflows.
pub(crate) const WEIGHT_FLOOR: f64 = 1e-300;

/// Rows whose counts seed each component in [`GlobalState::init_from_rows`].
const SEED_ROWS: usize = 1;

/// Shared variational parameters.
///
/// Atom parameters are stored component-major: entry `(k, i)` lives at
/// `k * n_cols + i`. Locations are stored the same way with `dim` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub n_components: usize,
    pub n_cols: usize,
    pub dim: usize,
    pub atom_shape: Vec<f64>,
    pub atom_rate: Vec<f64>,
    pub sticks: Vec<f64>,
    pub scale: f64,
    pub locations: Vec<f64>,
    /// Gamma-process mass.
    pub alpha: f64,
    /// Gamma-process rate.
    pub c: f64,
}

/// `w_k = s V_k Π_{j<k} (1 − V_j)`, computed in log space and floored.
pub(crate) fn stick_weights(scale: f64, sticks: &[f64]) -> Vec<f64> {
    let log_s = scale.ln();
    let mut log_rest = 0.0;
    sticks
        .iter()
        .map(|&v| {
            let w = (log_s + v.ln() + log_rest).exp().max(WEIGHT_FLOOR);
            log_rest += (-v).ln_1p();
            w
        })
        .collect()
}

impl GlobalState {
    /// Starting point near the prior: hyperparameters at their prior means,
    /// sticks at the prior mean of `Beta(1, α)`, atoms at the prior shape with
    /// up to 100% uniform jitter, locations drawn from `N(0, σ_l²/10)`.
    pub fn init(config: &ModelConfig, n_cols: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_cols == 0 {
            return Err(Error::invalid("matrix has no columns"));
        }
        let t = config.truncation;
        let alpha = config.alpha_prior.mean();
        let c = config.c_prior.mean();
        let mut rng = stream_rng(seed, 0x1000);
        let atom_shape = (0..t * n_cols)
            .map(|_| config.atom_prior.shape * (1.0 + rng.random::<f64>()))
            .collect();
        let locations = if config.variant.uses_locations() {
            normal_vec(t * config.dim, (config.sigma_l2 / 10.0).sqrt(), &mut rng)?
        } else {
            vec![0.0; t * config.dim]
        };
        Ok(GlobalState {
            n_components: t,
            n_cols,
            dim: config.dim,
            atom_shape,
            atom_rate: vec![config.atom_prior.rate; t * n_cols],
            sticks: vec![1.0 / (1.0 + alpha); t],
            scale: alpha / c,
            locations,
            alpha,
            c,
        })
    }

    /// Like [`GlobalState::init`], with each component's atom shapes also
    /// seeded by the counts of a few randomly chosen rows of `m`. Starting
    /// the components apart breaks the symmetry of the plain initialization,
    /// which otherwise costs many global iterations.
    pub fn init_from_rows(config: &ModelConfig, m: &SparseCountMatrix, seed: u64) -> Result<Self> {
        let mut state = Self::init(config, m.n_cols(), seed)?;
        if m.n_rows() == 0 {
            return Ok(state);
        }
        let n = state.n_cols;
        let mut rng = stream_rng(seed, 0x1001);
        for k in 0..state.n_components {
            for _ in 0..SEED_ROWS {
                let row = m.row(rng.random_range(0..m.n_rows()));
                for (&col, &y) in row.cols.iter().zip(row.counts) {
                    state.atom_shape[k * n + col as usize] += f64::from(y);
                }
            }
        }
        Ok(state)
    }

    pub fn location(&self, k: usize) -> &[f64] {
        &self.locations[k * self.dim..(k + 1) * self.dim]
    }

    /// Stick weights `w_k = s V_k Π_{j<k} (1 − V_j)`, computed in log space.
    pub fn weights(&self) -> Vec<f64> {
        stick_weights(self.scale, &self.sticks)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_components;
        let checks = [
            (self.atom_shape.len(), t * self.n_cols),
            (self.atom_rate.len(), t * self.n_cols),
            (self.sticks.len(), t),
            (self.locations.len(), t * self.dim),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self
            .atom_shape
            .iter()
            .chain(&self.atom_rate)
            .all(|&v| positive(v))
        {
            return Err(Error::invalid("atom parameters must be positive"));
        }
        if !self.sticks.iter().all(|&v| v > 0.0 && v < 1.0) {
            return Err(Error::invalid("sticks must lie in (0, 1)"));
        }
        if !(positive(self.scale) && positive(self.alpha) && positive(self.c)) {
            return Err(Error::invalid("scale, alpha and c must be positive"));
        }
        if !self.locations.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("locations".into()));
        }
        Ok(())
    }

    /// Checks that the state has the shape `config` describes.
    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        if self.n_components != config.truncation {
            return Err(Error::DimensionMismatch {
                expected: config.truncation,
                got: self.n_components,
            });
        }
        if self.dim != config.dim {
            return Err(Error::DimensionMismatch {
                expected: config.dim,
                got: self.dim,
            });
        }
        self.validate()
    }
}

/// Quantities derived from a [`GlobalState`] that every row needs.
#[derive(Debug, Clone)]
pub struct GlobalCache {
    pub weights: Vec<f64>,
    pub digamma_weights: Vec<f64>,
    pub log_gamma_weights: Vec<f64>,
    /// E[a_ki], component-major.
    pub atom_mean: Vec<f64>,
    /// E[log a_ki], column-major: entry `(k, i)` at `i * T + k`.
    pub atom_mean_log_t: Vec<f64>,
    /// exp(E[log a_ki] − max_k E[log a_ki]), column-major.
    pub atom_exp_t: Vec<f64>,
    /// Σ_i E[a_ki] per component.
    pub atom_totals: Vec<f64>,
}

impl GlobalCache {
    pub fn new(state: &GlobalState) -> Self {
        let t = state.n_components;
        let n = state.n_cols;
        let weights = state.weights();
        let digamma_weights = weights.iter().map(|&w| digamma_unchecked(w)).collect();
        let log_gamma_weights = weights.iter().map(|&w| log_gamma_unchecked(w)).collect();
        let atom_mean: Vec<f64> = state
            .atom_shape
            .iter()
            .zip(&state.atom_rate)
            .map(|(a, b)| a / b)
            .collect();
        let mut atom_mean_log_t = vec![0.0; t * n];
        for k in 0..t {
            for i in 0..n {
                let j = k * n + i;
                atom_mean_log_t[i * t + k] = digamma_unchecked(state.atom_shape[j]) - state.atom_rate[j].ln();
            }
        }
        let mut atom_exp_t = vec![0.0; t * n];
        for i in 0..n {
            let col = &atom_mean_log_t[i * t..(i + 1) * t];
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for k in 0..t {
                atom_exp_t[i * t + k] = (col[k] - max).exp();
            }
        }
        let atom_totals = (0..t)
            .map(|k| atom_mean[k * n..(k + 1) * n].iter().sum())
            .collect();
        GlobalCache {
            weights,
            digamma_weights,
            log_gamma_weights,
            atom_mean,
            atom_mean_log_t,
            atom_exp_t,
            atom_totals,
        }
    }
}

/// A global state with its configuration and derived cache.
#[derive(Debug, Clone)]
pub struct GlobalView<'a> {
    pub config: &'a ModelConfig,
    pub state: &'a GlobalState,
    pub cache: GlobalCache,
}

impl<'a> GlobalView<'a> {
    pub fn new(config: &'a ModelConfig, state: &'a GlobalState) -> Self {
        GlobalView {
            config,
            state,
            cache: GlobalCache::new(state),
        }
    }

    pub fn n_components(&self) -> usize {
        self.state.n_components
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }
}

/// Per-row variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub x_shape: Vec<f64>,
    pub x_rate: Vec<f64>,
    pub d: Vec<f64>,
    pub mu: f64,
    /// Auxiliary assignment probabilities, one block of `T` per nonzero cell
    /// in the row's column order.
    pub phi: Vec<f64>,
}

impl LocalState {
    /// The state a row with no events converges to: `d = 0`, `μ = 0` and
    /// `q(x_k)` equal to its prior.
    pub fn prior(view: &GlobalView<'_>) -> Self {
        let link = view.variant().link();
        let r = link.rate(0.0);
        LocalState {
            x_shape: view.cache.weights.clone(),
            x_rate: view.cache.atom_totals.iter().map(|a| r + a).collect(),
            d: vec![0.0; view.state.dim],
            mu: 0.0,
            phi: Vec::new(),
        }
    }
}

/// Zeroes the parameters a variant removes: locations and row vectors for
/// both baselines, and additionally the row means for the plain HGP.
pub fn restrict_variant(global: &mut GlobalState, locals: &mut [LocalState], variant: Variant) {
    if !variant.uses_locations() {
        global.locations.iter_mut().for_each(|v| *v = 0.0);
        for local in locals.iter_mut() {
            local.d.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    if !variant.uses_row_mean() {
        for local in locals.iter_mut() {
            local.mu = 0.0;
        }
    }
}
