//! Shared fixtures: random small model instances and independently coded
//! reference objectives.
#![allow(dead_code, clippy::needless_range_loop)]

use corrrm::data::SparseCountMatrix;
use corrrm::model::{GlobalState, LocalState, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, ln_gamma};

pub struct Instance {
    pub config: ModelConfig,
    pub global: GlobalState,
    pub locals: Vec<LocalState>,
    pub matrix: SparseCountMatrix,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    // Box-Muller keeps the fixture independent of the library's samplers
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A random instance with every parameter away from its boundaries. Row 0 is
/// left empty so the zero-row path is always exercised.
pub fn random_instance(
    seed: u64,
    variant: Variant,
    t: usize,
    n_rows: usize,
    n_cols: usize,
    dim: usize,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        truncation: t,
        dim,
        sigma_l2: 0.5,
        sigma_m2: 0.8,
        variant,
        ..ModelConfig::default()
    };
    let mut entries = Vec::new();
    for u in 1..n_rows {
        for i in 0..n_cols {
            if rng.random::<f64>() < 0.5 {
                entries.push((u, i, 1 + (rng.random::<f64>() * 6.0) as u32));
            }
        }
    }
    if entries.is_empty() {
        entries.push((n_rows - 1, 0, 2));
    }
    let matrix = SparseCountMatrix::from_triplets(n_rows, n_cols, entries).unwrap();

    let global = GlobalState {
        n_components: t,
        n_cols,
        dim,
        atom_shape: (0..t * n_cols).map(|_| uniform(&mut rng, 0.3, 3.0)).collect(),
        atom_rate: (0..t * n_cols).map(|_| uniform(&mut rng, 0.5, 3.0)).collect(),
        sticks: (0..t).map(|_| uniform(&mut rng, 0.1, 0.8)).collect(),
        scale: uniform(&mut rng, 0.5, 3.0),
        locations: if variant.uses_locations() {
            (0..t * dim).map(|_| gauss(&mut rng, 0.6)).collect()
        } else {
            vec![0.0; t * dim]
        },
        alpha: uniform(&mut rng, 0.5, 3.0),
        c: uniform(&mut rng, 0.5, 3.0),
    };
    let locals = (0..n_rows)
        .map(|u| {
            let nnz = matrix.row(u).nnz();
            let mut phi = Vec::with_capacity(nnz * t);
            for _ in 0..nnz {
                let raw: Vec<f64> = (0..t).map(|_| uniform(&mut rng, 0.05, 1.0)).collect();
                let s: f64 = raw.iter().sum();
                phi.extend(raw.iter().map(|p| p / s));
            }
            LocalState {
                x_shape: (0..t).map(|_| uniform(&mut rng, 0.3, 3.0)).collect(),
                x_rate: (0..t).map(|_| uniform(&mut rng, 0.5, 3.0)).collect(),
                d: if variant.uses_locations() {
                    (0..dim).map(|_| gauss(&mut rng, 0.5)).collect()
                } else {
                    vec![0.0; dim]
                },
                mu: if variant.uses_row_mean() {
                    gauss(&mut rng, 0.5)
                } else {
                    0.0
                },
                phi,
            }
        })
        .collect();
    Instance {
        config,
        global,
        locals,
        matrix,
    }
}

fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// E_q[log Gamma(x; shape, rate)] with q = Gamma(a, b).
fn expected_ln_gamma_pdf(a: f64, b: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * (digamma(a) - b.ln()) - rate * a / b
}

fn gamma_entropy(a: f64, b: f64) -> f64 {
    a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
}

fn ln_normal(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - x * x / (2.0 * var)
}

fn stick_weights(sticks: &[f64], scale: f64) -> Vec<f64> {
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

/// ELBO of the full model written out term by term, with explicit loops and
/// statrs special functions. Parameters the variant removes are skipped.
pub fn reference_elbo(inst: &Instance) -> f64 {
    let cfg = &inst.config;
    let g = &inst.global;
    let (t, n, dim) = (g.n_components, g.n_cols, g.dim);
    let variant = cfg.variant;
    let softplus_link = variant == Variant::SoftplusCnpf;
    let w = stick_weights(&g.sticks, g.scale);

    let mut total = ln_gamma_pdf(g.alpha, cfg.alpha_prior.shape, cfg.alpha_prior.rate)
        + ln_gamma_pdf(g.c, cfg.c_prior.shape, cfg.c_prior.rate)
        + ln_gamma_pdf(g.scale, g.alpha, g.c);
    for &v in &g.sticks {
        // Beta(v; 1, α) = α (1 − v)^{α − 1}
        total += g.alpha.ln() + (g.alpha - 1.0) * (1.0 - v).ln();
    }
    if variant.uses_locations() {
        for x in &g.locations {
            total += ln_normal(*x, cfg.sigma_l2);
        }
    }
    for j in 0..t * n {
        let (a, b) = (g.atom_shape[j], g.atom_rate[j]);
        total += expected_ln_gamma_pdf(a, b, cfg.atom_prior.shape, cfg.atom_prior.rate) + gamma_entropy(a, b);
    }

    for (u, local) in inst.locals.iter().enumerate() {
        if variant.uses_locations() {
            for x in &local.d {
                total += ln_normal(*x, 1.0);
            }
        }
        if variant.uses_row_mean() {
            total += ln_normal(local.mu, cfg.sigma_m2);
        }
        for k in 0..t {
            let mut gk = 0.0;
            if variant.uses_locations() {
                for j in 0..dim {
                    gk += local.d[j] * g.locations[k * dim + j];
                }
            }
            if variant.uses_row_mean() {
                gk += local.mu;
            }
            let rate = if softplus_link {
                1.0 / (1.0 + gk.exp()).ln()
            } else {
                (-gk).exp()
            };
            let (a, b) = (local.x_shape[k], local.x_rate[k]);
            total += expected_ln_gamma_pdf(a, b, w[k], rate) + gamma_entropy(a, b);
        }
        let row = inst.matrix.row(u);
        for (cell, (&col, &y)) in row.cols.iter().zip(row.counts).enumerate() {
            let y = f64::from(y);
            for k in 0..t {
                let p = local.phi[cell * t + k];
                let j = k * n + col as usize;
                let e_log_x = digamma(local.x_shape[k]) - local.x_rate[k].ln();
                let e_log_a = digamma(g.atom_shape[j]) - g.atom_rate[j].ln();
                total += y * p * (e_log_x + e_log_a - p.ln());
            }
            total -= ln_gamma(y + 1.0);
        }
        for k in 0..t {
            for i in 0..n {
                let j = k * n + i;
                total -= local.x_shape[k] / local.x_rate[k] * g.atom_shape[j] / g.atom_rate[j];
            }
        }
    }
    total
}

/// The uncorrelated baselines on their own: `x_ku ~ Gamma(w_k, 1)` for the
/// plain model, `x_ku ~ Gamma(w_k, e^{-μ_u})` with `μ_u ~ N(0, σ_m²)` for the
/// scaled one. There are no locations or row vectors at all.
pub fn reference_uncorrelated_elbo(inst: &Instance, scaled: bool) -> f64 {
    let cfg = &inst.config;
    let g = &inst.global;
    let (t, n) = (g.n_components, g.n_cols);
    let w = stick_weights(&g.sticks, g.scale);
    let mut total = ln_gamma_pdf(g.alpha, cfg.alpha_prior.shape, cfg.alpha_prior.rate)
        + ln_gamma_pdf(g.c, cfg.c_prior.shape, cfg.c_prior.rate)
        + ln_gamma_pdf(g.scale, g.alpha, g.c);
    for &v in &g.sticks {
        total += g.alpha.ln() + (g.alpha - 1.0) * (1.0 - v).ln();
    }
    for j in 0..t * n {
        let (a, b) = (g.atom_shape[j], g.atom_rate[j]);
        total += expected_ln_gamma_pdf(a, b, cfg.atom_prior.shape, cfg.atom_prior.rate) + gamma_entropy(a, b);
    }
    for (u, local) in inst.locals.iter().enumerate() {
        let rate = if scaled {
            total += ln_normal(local.mu, cfg.sigma_m2);
            (-local.mu).exp()
        } else {
            1.0
        };
        for k in 0..t {
            let (a, b) = (local.x_shape[k], local.x_rate[k]);
            total += expected_ln_gamma_pdf(a, b, w[k], rate) + gamma_entropy(a, b);
        }
        let row = inst.matrix.row(u);
        for (cell, (&col, &y)) in row.cols.iter().zip(row.counts).enumerate() {
            let y = f64::from(y);
            for k in 0..t {
                let p = local.phi[cell * t + k];
                let j = k * n + col as usize;
                total += y
                    * p
                    * (digamma(local.x_shape[k]) - local.x_rate[k].ln() + digamma(g.atom_shape[j])
                        - g.atom_rate[j].ln()
                        - p.ln());
            }
            total -= ln_gamma(y + 1.0);
        }
        for k in 0..t {
            let atoms: f64 = (0..n)
                .map(|i| g.atom_shape[k * n + i] / g.atom_rate[k * n + i])
                .sum();
            total -= local.x_shape[k] / local.x_rate[k] * atoms;
        }
    }
    total
}

/// Relative error with a floor on the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Analytic gradient of every point-estimated parameter against a central
/// finite difference of the ELBO in unconstrained coordinates. Returns
/// `(parameter name, analytic, numeric)`.
pub fn gradient_pairs(inst: &Instance, h: f64) -> Vec<(String, f64, f64)> {
    use corrrm::mathfn::{inv_softplus, logit, sigmoid, softplus};
    use corrrm::model::{elbo, global_gradient, grad_local, GlobalView, RowStats};

    let cfg = &inst.config;
    let view = GlobalView::new(cfg, &inst.global);
    let mut stats = RowStats::new(&view);
    for (u, local) in inst.locals.iter().enumerate() {
        stats.add_row(local, &view, inst.matrix.row(u), false).unwrap();
    }
    let grad = global_gradient(&view, &stats);

    let objective = |g: &GlobalState, locals: &[LocalState]| {
        elbo(&inst.matrix, &GlobalView::new(cfg, g), locals).unwrap()
    };
    let fd_global = |perturb: &dyn Fn(&mut GlobalState, f64)| {
        let mut plus = inst.global.clone();
        perturb(&mut plus, h);
        let mut minus = inst.global.clone();
        perturb(&mut minus, -h);
        (objective(&plus, &inst.locals) - objective(&minus, &inst.locals)) / (2.0 * h)
    };

    let mut out = Vec::new();
    out.push((
        "scale".to_string(),
        grad.scale,
        fd_global(&|g, e| g.scale = softplus(inv_softplus(g.scale) + e)),
    ));
    out.push((
        "alpha".to_string(),
        grad.alpha,
        fd_global(&|g, e| g.alpha = softplus(inv_softplus(g.alpha) + e)),
    ));
    out.push((
        "c".to_string(),
        grad.c,
        fd_global(&|g, e| g.c = softplus(inv_softplus(g.c) + e)),
    ));
    for k in 0..inst.global.n_components {
        out.push((
            format!("stick[{k}]"),
            grad.sticks[k],
            fd_global(&|g, e| g.sticks[k] = sigmoid(logit(g.sticks[k]) + e)),
        ));
    }
    if cfg.variant.uses_locations() {
        for j in 0..inst.global.locations.len() {
            out.push((
                format!("location[{j}]"),
                grad.locations[j],
                fd_global(&|g, e| g.locations[j] += e),
            ));
        }
    }
    for (u, local) in inst.locals.iter().enumerate() {
        let (gd, gm) = grad_local(local, &view);
        let fd_local = |perturb: &dyn Fn(&mut LocalState, f64)| {
            let mut plus = inst.locals.clone();
            perturb(&mut plus[u], h);
            let mut minus = inst.locals.clone();
            perturb(&mut minus[u], -h);
            (objective(&inst.global, &plus) - objective(&inst.global, &minus)) / (2.0 * h)
        };
        if cfg.variant.uses_locations() {
            for j in 0..local.d.len() {
                out.push((format!("d[{u}][{j}]"), gd[j], fd_local(&|l, e| l.d[j] += e)));
            }
        }
        if cfg.variant.uses_row_mean() {
            out.push((format!("mu[{u}]"), gm, fd_local(&|l, e| l.mu += e)));
        }
    }
    out
}
