//! Batch and stochastic variational inference.
//!
//! Each global iteration optimizes the local parameters of a set of rows with
//! the global state held fixed, reduces their statistics in a fixed chunk
//! order (so results do not depend on the number of worker threads), and
//! takes one preconditioned step on the global parameters.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{HeldOutSplit, Row, SparseCountMatrix};
use crate::error::{Error, Result};
use crate::eval::evaluate_perplexity;
use crate::mathfn::sample::stream_rng;
use crate::model::{
    blend_sticks, global_elbo, global_gradient, newton_step_local, solve_sticks, update_phi, update_x,
    GlobalGradient, GlobalState, GlobalView, LinkTerms, LocalState, ModelConfig, RowStats, StickParams,
};
use crate::optim::{newton_direction, Reparam, RmsPropState, RobbinsMonroSchedule};

/// Rows per reduction chunk. Fixed so the summation order never depends on
/// how many threads run the chunks.
pub const ROW_CHUNK: usize = 32;

const LOCATION_HALVINGS: usize = 10;

/// Stopping rule for the per-row inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LocalSettings {
    fn default() -> Self {
        LocalSettings {
            tol: 1e-4,
            max_iters: 100,
        }
    }
}

/// Alternates assignment, weight and `(d_u, μ_u)` updates for one row until
/// `‖Δd_u‖∞`, `|Δμ_u|` and the relative change of every weight shape fall
/// below `tol`, or `max_iters` sweeps have run. Returns the number of sweeps.
pub fn optimize_local(
    local: &mut LocalState,
    view: &GlobalView<'_>,
    row: Row<'_>,
    settings: &LocalSettings,
) -> Result<usize> {
    let mut previous = local.x_shape.clone();
    for it in 1..=settings.max_iters {
        update_phi(local, view, row)?;
        update_x(local, view, row);
        let moved = newton_step_local(local, view)?;
        let shape_change = local
            .x_shape
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-10))
            .fold(0.0, f64::max);
        if !shape_change.is_finite() || !local.mu.is_finite() {
            return Err(Error::NonFinite("row parameters".into()));
        }
        if moved < settings.tol && shape_change < settings.tol {
            return Ok(it);
        }
        previous.copy_from_slice(&local.x_shape);
    }
    Ok(settings.max_iters)
}

/// Batch (all rows per step) or stochastic (a minibatch per step) inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Batch,
    Svi,
}

impl FitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(FitMode::Batch),
            "svi" => Ok(FitMode::Svi),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FitMode::Batch => "batch",
            FitMode::Svi => "svi",
        }
    }
}

/// How the scale, sticks, `α` and `c` are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarSolver {
    /// Damped Newton on the objective with each row's `q(x)` profiled out.
    Newton,
    /// One RMSProp step along the ELBO gradient.
    RmsProp,
}

impl ScalarSolver {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(ScalarSolver::Newton),
            "rmsprop" => Ok(ScalarSolver::RmsProp),
            other => Err(Error::invalid(format!("unknown scalar solver `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarSolver::Newton => "newton",
            ScalarSolver::RmsProp => "rmsprop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub mode: FitMode,
    pub max_iters: usize,
    /// Never stop on the validation rule before this many iterations.
    pub min_iters: usize,
    /// Validation perplexity is computed every this many iterations.
    pub eval_every: usize,
    /// Evaluations without improvement tolerated before stopping.
    pub patience: usize,
    pub local: LocalSettings,
    pub schedule: RobbinsMonroSchedule,
    /// RMSProp smoothing fraction.
    pub tau: f64,
    /// Multiplier on the schedule for the RMSProp-preconditioned parameters.
    pub step_scale: f64,
    /// Minibatch size for stochastic inference.
    pub batch_size: usize,
    /// Draw minibatch rows with replacement instead of sweeping epochs.
    pub with_replacement: bool,
    /// Record the ELBO every iteration (batch mode).
    pub track_elbo: bool,
    pub scalar_solver: ScalarSolver,
    /// Newton iterations per global step for [`ScalarSolver::Newton`].
    pub scalar_newton_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: FitMode::Batch,
            max_iters: 200,
            min_iters: 20,
            eval_every: 10,
            patience: 3,
            local: LocalSettings::default(),
            schedule: RobbinsMonroSchedule::default(),
            tau: 0.1,
            step_scale: 1.0,
            batch_size: 256,
            with_replacement: false,
            track_elbo: true,
            scalar_solver: ScalarSolver::Newton,
            scalar_newton_iters: 20,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        RobbinsMonroSchedule::new(self.schedule.offset, self.schedule.exponent)?;
        if self.max_iters == 0 || self.eval_every == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "max_iters, eval_every and batch_size must be positive",
            ));
        }
        if !(self.local.tol > 0.0) || self.local.max_iters == 0 {
            return Err(Error::invalid(
                "local tolerance and iteration cap must be positive",
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        if self.scalar_solver == ScalarSolver::Newton && self.scalar_newton_iters == 0 {
            return Err(Error::invalid("scalar_newton_iters must be positive"));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::invalid("step_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    ValidationPlateau,
    ElboConverged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    /// ELBO before each global step (batch mode with tracking).
    pub elbo_trace: Vec<f64>,
    /// `(iteration, perplexity)` for each validation evaluation.
    pub validation_trace: Vec<(usize, f64)>,
    pub seconds_per_iteration: Vec<f64>,
    pub convergence: Convergence,
    /// Iteration whose global state was returned.
    pub best_iteration: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub global: GlobalState,
    pub locals: Vec<LocalState>,
    pub report: FitReport,
}

/// Optimizes the listed rows' local states in place and returns the ordered
/// reduction of their statistics.
fn local_pass(
    m: &SparseCountMatrix,
    rows: &[usize],
    locals: &mut [LocalState],
    view: &GlobalView<'_>,
    settings: &LocalSettings,
    with_elbo: bool,
) -> Result<RowStats> {
    let parts: Vec<RowStats> = locals
        .par_chunks_mut(ROW_CHUNK)
        .zip(rows.par_chunks(ROW_CHUNK))
        .map(|(chunk, ids)| {
            let mut stats = RowStats::new(view);
            for (local, &u) in chunk.iter_mut().zip(ids) {
                let row = m.row(u);
                optimize_local(local, view, row, settings)
                    .map_err(|e| Error::Degenerate(format!("row {u}: {e}")))?;
                stats.add_row(local, view, row, with_elbo)?;
            }
            Ok(stats)
        })
        .collect::<Result<_>>()?;
    let mut total = RowStats::new(view);
    for part in &parts {
        total.merge(part);
    }
    Ok(total)
}

/// Mutable optimizer state carried across global iterations.
struct Stepper {
    scalars: RmsPropState,
    locations: RmsPropState,
}

impl Stepper {
    fn new(config: &ModelConfig, tau: f64) -> Result<Self> {
        Ok(Stepper {
            scalars: RmsPropState::new(3 + config.truncation, tau)?,
            locations: RmsPropState::new(config.truncation * config.dim, tau)?,
        })
    }
}

/// `−|ℓ|²/(2σ_l²) + factor · Σ_u ψ(d_u · ℓ + μ_u)`: the ELBO as a function of one
/// location with everything else fixed.
fn location_objective(
    loc: &[f64],
    k: usize,
    view: &GlobalView<'_>,
    rows: &[&LocalState],
    factor: f64,
) -> f64 {
    let link = view.variant().link();
    let w = view.cache.weights[k];
    let mut total = 0.0;
    for local in rows {
        let g = crate::mathfn::dot(&local.d, loc) + local.mu;
        let LinkTerms { value, .. } = link.terms(g, w, local.x_shape[k] / local.x_rate[k]);
        total += value;
    }
    factor * total - 0.5 * crate::mathfn::dot(loc, loc) / view.config.sigma_l2
}

/// Applies one global step with weight `rho` on the natural-gradient and
/// Newton blocks and `eta` on the RMSProp block.
#[allow(clippy::too_many_arguments)]
fn global_step(
    view: &GlobalView<'_>,
    stats: &RowStats,
    grad: &GlobalGradient,
    rows: &[&LocalState],
    factor: f64,
    rho: f64,
    eta: f64,
    fit: &FitConfig,
    stepper: &mut Stepper,
) -> Result<GlobalState> {
    let cfg = view.config;
    let mut next = view.state.clone();
    let t = next.n_components;
    let n = next.n_cols;
    let dim = next.dim;

    for j in 0..t * n {
        let k = j / n;
        next.atom_shape[j] += rho * (grad.atom_shape_target[j] - next.atom_shape[j]);
        next.atom_rate[j] += rho * (grad.atom_rate_target[k] - next.atom_rate[j]);
    }

    if cfg.variant.uses_locations() {
        let mut fallback = Vec::new();
        for k in 0..t {
            let g = &grad.locations[k * dim..(k + 1) * dim];
            let h = &grad.location_hessian[k * dim * dim..(k + 1) * dim * dim];
            match newton_direction(g, h) {
                Some(delta) => {
                    let old = view.state.location(k);
                    let start = location_objective(old, k, view, rows, factor);
                    let mut step = rho;
                    let mut cand = vec![0.0; dim];
                    for _ in 0..LOCATION_HALVINGS {
                        for j in 0..dim {
                            cand[j] = old[j] + step * delta[j];
                        }
                        if location_objective(&cand, k, view, rows, factor) >= start {
                            next.locations[k * dim..(k + 1) * dim].copy_from_slice(&cand);
                            break;
                        }
                        step *= 0.5;
                    }
                }
                None => fallback.push(k),
            }
        }
        // one RMSProp update over all locations keeps its running average
        // aligned; only the components without a usable Hessian take it
        if !fallback.is_empty() {
            log::debug!("{} location blocks fell back to RMSProp", fallback.len());
            let steps = stepper.locations.step(&grad.locations, eta)?;
            for k in fallback {
                for j in k * dim..(k + 1) * dim {
                    next.locations[j] = Reparam::Real.apply(next.locations[j], steps[j]);
                }
            }
        }
    }

    let newton = match fit.scalar_solver {
        ScalarSolver::Newton => {
            let start = StickParams::from_state(view.state);
            match solve_sticks(cfg, stats, &start, fit.scalar_newton_iters) {
                Ok((target, _)) => Some(blend_sticks(&start, &target, rho)),
                Err(e) => {
                    log::warn!("stick solve failed ({e}); taking a gradient step");
                    None
                }
            }
        }
        ScalarSolver::RmsProp => None,
    };
    match newton {
        Some(p) => p.write_to(&mut next),
        None => {
            let mut scalar_grad = Vec::with_capacity(3 + t);
            scalar_grad.extend([grad.scale, grad.alpha, grad.c]);
            scalar_grad.extend(&grad.sticks);
            let steps = stepper.scalars.step(&scalar_grad, eta)?;
            next.scale = Reparam::Positive.apply(next.scale, steps[0]);
            next.alpha = Reparam::Positive.apply(next.alpha, steps[1]);
            next.c = Reparam::Positive.apply(next.c, steps[2]);
            for k in 0..t {
                next.sticks[k] = Reparam::Unit.apply(next.sticks[k], steps[3 + k]);
            }
        }
    }
    next.validate()?;
    Ok(next)
}

/// Tracks validation perplexity and the best state seen.
struct Monitor<'a> {
    validation: Option<&'a HeldOutSplit>,
    best: Option<(f64, usize, GlobalState)>,
    stale: usize,
    trace: Vec<(usize, f64)>,
}

impl<'a> Monitor<'a> {
    /// Evaluates `state` after `iteration` steps; returns true when patience
    /// is exhausted.
    fn observe(
        &mut self,
        iteration: usize,
        state: &GlobalState,
        model: &ModelConfig,
        fit: &FitConfig,
    ) -> Result<bool> {
        let Some(split) = self.validation else {
            return Ok(false);
        };
        let view = GlobalView::new(model, state);
        let report = evaluate_perplexity(&split.heldout_obs, &split.heldout_test, &view, &fit.local)?;
        let p = report.perplexity;
        log::info!("iteration {iteration}: validation perplexity {p:.4}");
        self.trace.push((iteration, p));
        match &self.best {
            Some((best, _, _)) if p >= *best => self.stale += 1,
            _ => {
                self.best = Some((p, iteration, state.clone()));
                self.stale = 0;
            }
        }
        Ok(self.stale >= fit.patience && iteration >= fit.min_iters)
    }
}

fn check_inputs(
    m: &SparseCountMatrix,
    model: &ModelConfig,
    fit: &FitConfig,
    validation: Option<&HeldOutSplit>,
) -> Result<()> {
    model.validate()?;
    fit.validate()?;
    if m.n_rows() == 0 || m.n_cols() == 0 {
        return Err(Error::invalid("training matrix is empty"));
    }
    if let Some(v) = validation {
        if v.heldout_obs.n_cols() != m.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: m.n_cols(),
                got: v.heldout_obs.n_cols(),
            });
        }
    }
    Ok(())
}

/// Runs batch inference (`FitMode::Batch`) or stochastic inference
/// (`FitMode::Svi`) from a seeded initial state.
pub fn fit(
    m: &SparseCountMatrix,
    model: &ModelConfig,
    fit: &FitConfig,
    validation: Option<&HeldOutSplit>,
    seed: u64,
) -> Result<FitResult> {
    check_inputs(m, model, fit, validation)?;
    let init = GlobalState::init_from_rows(model, m, seed)?;
    fit_from(m, model, fit, validation, seed, init)
}

/// Like [`fit`], starting from a given global state.
pub fn fit_from(
    m: &SparseCountMatrix,
    model: &ModelConfig,
    fit: &FitConfig,
    validation: Option<&HeldOutSplit>,
    seed: u64,
    init: GlobalState,
) -> Result<FitResult> {
    fit_observed(m, model, fit, validation, seed, init, &mut |_, _| Ok(()))
}

/// Called after every global iteration with the iteration count and the new
/// global state; an error aborts the fit.
pub type Observer<'a> = dyn FnMut(usize, &GlobalState) -> Result<()> + 'a;

/// Like [`fit_from`], reporting each iteration to `observer`.
pub fn fit_observed(
    m: &SparseCountMatrix,
    model: &ModelConfig,
    fit: &FitConfig,
    validation: Option<&HeldOutSplit>,
    seed: u64,
    init: GlobalState,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    check_inputs(m, model, fit, validation)?;
    init.check_config(model)?;
    if init.n_cols != m.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: m.n_cols(),
            got: init.n_cols,
        });
    }
    match fit.mode {
        FitMode::Batch => run_batch(m, model, fit, validation, init, observer),
        FitMode::Svi => run_svi(m, model, fit, validation, seed, init, observer),
    }
}

fn run_batch(
    m: &SparseCountMatrix,
    model: &ModelConfig,
    fit: &FitConfig,
    validation: Option<&HeldOutSplit>,
    mut global: GlobalState,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    let rows: Vec<usize> = (0..m.n_rows()).collect();
    let mut locals = {
        let view = GlobalView::new(model, &global);
        vec![LocalState::prior(&view); m.n_rows()]
    };
    let mut stepper = Stepper::new(model, fit.tau)?;
    let mut monitor = Monitor {
        validation,
        best: None,
        stale: 0,
        trace: Vec::new(),
    };
    let mut elbo_trace = Vec::new();
    let mut seconds = Vec::new();
    let mut convergence = Convergence::MaxIterations;
    let mut iterations = 0;

    for t in 0..fit.max_iters {
        let started = Instant::now();
        let view = GlobalView::new(model, &global);
        let stats = local_pass(m, &rows, &mut locals, &view, &fit.local, fit.track_elbo)?;
        if fit.track_elbo {
            elbo_trace.push(stats.elbo + global_elbo(&view)?);
        }
        let grad = global_gradient(&view, &stats);
        let eta = fit.step_scale * fit.schedule.rate(t as u64);
        let refs: Vec<&LocalState> = locals.iter().collect();
        let next = global_step(&view, &stats, &grad, &refs, 1.0, 1.0, eta, fit, &mut stepper)?;
        drop(view);
        global = next;
        iterations = t + 1;
        seconds.push(started.elapsed().as_secs_f64());
        observer(iterations, &global)?;

        if iterations % fit.eval_every == 0 && monitor.observe(iterations, &global, model, fit)? {
            convergence = Convergence::ValidationPlateau;
            break;
        }
        if validation.is_none() && fit.track_elbo && iterations >= fit.min_iters {
            if let [.., a, b] = elbo_trace[..] {
                if (b - a).abs() <= 1e-7 * b.abs() {
                    convergence = Convergence::ElboConverged;
                    break;
                }
            }
        }
    }
    finish(
        global,
        locals,
        monitor,
        iterations,
        elbo_trace,
        seconds,
        convergence,
        model,
        fit,
    )
}

fn run_svi(
    m: &SparseCountMatrix,
    model: &ModelConfig,
    fit: &FitConfig,
    validation: Option<&HeldOutSplit>,
    seed: u64,
    mut global: GlobalState,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    let n_rows = m.n_rows();
    let batch_size = fit.batch_size.min(n_rows);
    let mut locals = {
        let view = GlobalView::new(model, &global);
        vec![LocalState::prior(&view); n_rows]
    };
    let mut rng = stream_rng(seed, 0x2000);
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut stepper = Stepper::new(model, fit.tau)?;
    let mut monitor = Monitor {
        validation,
        best: None,
        stale: 0,
        trace: Vec::new(),
    };
    let mut seconds = Vec::new();
    let mut convergence = Convergence::MaxIterations;
    let mut iterations = 0;

    for t in 0..fit.max_iters {
        let started = Instant::now();
        let batch: Vec<usize> = if fit.with_replacement {
            (0..batch_size).map(|_| rng.random_range(0..n_rows)).collect()
        } else {
            let mut b = Vec::with_capacity(batch_size);
            while b.len() < batch_size {
                if cursor == n_rows {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                b.push(order[cursor]);
                cursor += 1;
            }
            b
        };
        let view = GlobalView::new(model, &global);
        let mut batch_locals: Vec<LocalState> = batch.iter().map(|&u| locals[u].clone()).collect();
        let mut stats = local_pass(m, &batch, &mut batch_locals, &view, &fit.local, false)?;
        let factor = n_rows as f64 / batch.len() as f64;
        stats.scale(factor);
        let grad = global_gradient(&view, &stats);
        let rho = fit.schedule.rate(t as u64);
        let refs: Vec<&LocalState> = batch_locals.iter().collect();
        let next = global_step(
            &view,
            &stats,
            &grad,
            &refs,
            factor,
            rho,
            fit.step_scale * rho,
            fit,
            &mut stepper,
        )?;
        drop(view);
        global = next;
        for (&u, local) in batch.iter().zip(batch_locals) {
            locals[u] = local;
        }
        iterations = t + 1;
        seconds.push(started.elapsed().as_secs_f64());
        observer(iterations, &global)?;

        if iterations % fit.eval_every == 0 && monitor.observe(iterations, &global, model, fit)? {
            convergence = Convergence::ValidationPlateau;
            break;
        }
    }
    finish(
        global,
        locals,
        monitor,
        iterations,
        Vec::new(),
        seconds,
        convergence,
        model,
        fit,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    global: GlobalState,
    locals: Vec<LocalState>,
    mut monitor: Monitor<'_>,
    iterations: usize,
    elbo_trace: Vec<f64>,
    seconds: Vec<f64>,
    convergence: Convergence,
    model: &ModelConfig,
    fit: &FitConfig,
) -> Result<FitResult> {
    // make sure the final state was evaluated before choosing the best one
    if monitor.validation.is_some() && monitor.trace.last().map(|t| t.0) != Some(iterations) {
        monitor.observe(iterations, &global, model, fit)?;
    }
    let (global, best_iteration) = match monitor.best.take() {
        Some((_, it, state)) => (state, it),
        None => (global, iterations),
    };
    Ok(FitResult {
        global,
        locals,
        report: FitReport {
            iterations,
            elbo_trace,
            validation_trace: monitor.trace,
            seconds_per_iteration: seconds,
            convergence,
            best_iteration,
        },
    })
}

/// Optimizes every row's local state for a fixed global state and returns the
/// row statistics scaled by `factor`. Rows are processed in `rows` order.
pub fn row_statistics(
    m: &SparseCountMatrix,
    rows: &[usize],
    view: &GlobalView<'_>,
    settings: &LocalSettings,
    factor: f64,
) -> Result<(Vec<LocalState>, RowStats)> {
    let mut locals = vec![LocalState::prior(view); rows.len()];
    let mut stats = local_pass(m, rows, &mut locals, view, settings, false)?;
    stats.scale(factor);
    Ok((locals, stats))
}
