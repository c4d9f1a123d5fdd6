//! Per-row coordinate updates and the Gaussian-process step on `(d_u, μ_u)`.

use nalgebra::{DMatrix, DVector};

use super::state::{GlobalView, LocalState};
use crate::data::Row;
use crate::error::{Error, Result};
use crate::mathfn::{digamma_unchecked, dot};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// `g_uk = d_u · ℓ_k + μ_u`, with the variant's frozen parameters read as zero.
pub fn g_linear(local: &LocalState, view: &GlobalView<'_>, k: usize) -> Result<f64> {
    if local.d.len() != view.state.dim {
        return Err(Error::DimensionMismatch {
            expected: view.state.dim,
            got: local.d.len(),
        });
    }
    if k >= view.n_components() {
        return Err(Error::invalid(format!("component {k} out of range")));
    }
    Ok(g_unchecked(local, view, k))
}

#[inline]
fn g_unchecked(local: &LocalState, view: &GlobalView<'_>, k: usize) -> f64 {
    let v = view.variant();
    let mut g = 0.0;
    if v.uses_locations() {
        g += dot(&local.d, view.state.location(k));
    }
    if v.uses_row_mean() {
        g += local.mu;
    }
    g
}

pub(crate) fn g_values(local: &LocalState, view: &GlobalView<'_>) -> Vec<f64> {
    (0..view.n_components())
        .map(|k| g_unchecked(local, view, k))
        .collect()
}

pub(crate) fn mean_x(local: &LocalState) -> Vec<f64> {
    local
        .x_shape
        .iter()
        .zip(&local.x_rate)
        .map(|(a, b)| a / b)
        .collect()
}

pub(crate) fn mean_log_x(local: &LocalState) -> Vec<f64> {
    local
        .x_shape
        .iter()
        .zip(&local.x_rate)
        .map(|(a, b)| digamma_unchecked(*a) - b.ln())
        .collect()
}

/// Sets `φ_uik ∝ exp(E[log x_ku] + E[log a_ki])` for every nonzero cell of the row.
pub fn update_phi(local: &mut LocalState, view: &GlobalView<'_>, row: Row<'_>) -> Result<()> {
    let t = view.n_components();
    let mlx = mean_log_x(local);
    let max = mlx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = mlx.iter().map(|v| (v - max).exp()).collect();
    local.phi.resize(row.nnz() * t, 0.0);
    for (cell, &col) in row.cols.iter().enumerate() {
        let col = col as usize;
        let out = &mut local.phi[cell * t..(cell + 1) * t];
        let ea = &view.cache.atom_exp_t[col * t..(col + 1) * t];
        let mut sum = 0.0;
        for k in 0..t {
            let p = ex[k] * ea[k];
            out[k] = p;
            sum += p;
        }
        if !(sum > 1e-200 && sum.is_finite()) {
            // the two shifts did not line up; redo this cell in log space
            let la = &view.cache.atom_mean_log_t[col * t..(col + 1) * t];
            let m = (0..t).map(|k| mlx[k] + la[k]).fold(f64::NEG_INFINITY, f64::max);
            sum = 0.0;
            for k in 0..t {
                let p = (mlx[k] + la[k] - m).exp();
                out[k] = p;
                sum += p;
            }
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(Error::Degenerate(format!(
                    "assignment probabilities for column {col} are not finite"
                )));
            }
        }
        let inv = 1.0 / sum;
        out.iter_mut().for_each(|p| *p *= inv);
    }
    Ok(())
}

/// Σ_i y_ui φ_uik for each component.
pub(crate) fn phi_counts(local: &LocalState, row: Row<'_>, t: usize) -> Vec<f64> {
    let mut counts = vec![0.0; t];
    for (cell, &y) in row.counts.iter().enumerate() {
        let y = f64::from(y);
        for (acc, p) in counts.iter_mut().zip(&local.phi[cell * t..(cell + 1) * t]) {
            *acc += y * p;
        }
    }
    counts
}

/// Coordinate optimum of `q(x_ku)`: shape `w_k + Σ_i y φ_uik`, rate
/// `rate(g_uk) + Σ_i E[a_ki]`.
pub fn update_x(local: &mut LocalState, view: &GlobalView<'_>, row: Row<'_>) {
    let t = view.n_components();
    let link = view.variant().link();
    let counts = phi_counts(local, row, t);
    for k in 0..t {
        let g = g_unchecked(local, view, k);
        local.x_shape[k] = view.cache.weights[k] + counts[k];
        local.x_rate[k] = link.rate(g) + view.cache.atom_totals[k];
    }
}

/// Derivative of the row's expected log p(x_ku | w_k, g_uk) in `w_k`:
/// `log rate(g_uk) − Ψ(w_k) + E[log x_ku]`.
pub fn dw(local: &LocalState, view: &GlobalView<'_>, k: usize) -> f64 {
    let g = g_unchecked(local, view, k);
    view.variant().link().log_rate(g) - view.cache.digamma_weights[k] + digamma_unchecked(local.x_shape[k])
        - local.x_rate[k].ln()
}

/// ELBO terms that depend on `(d_u, μ_u)`: their priors plus
/// `Σ_k w_k log rate(g_uk) − rate(g_uk) E[x_uk]`. Frozen parameters contribute nothing.
pub fn local_gp_objective(local: &LocalState, view: &GlobalView<'_>) -> f64 {
    let v = view.variant();
    let link = v.link();
    let ex = mean_x(local);
    let mut total = 0.0;
    if v.uses_locations() {
        total -= 0.5 * dot(&local.d, &local.d);
    }
    if v.uses_row_mean() {
        total -= 0.5 * local.mu * local.mu / view.config.sigma_m2;
    }
    for k in 0..view.n_components() {
        let g = g_unchecked(local, view, k);
        total += link.terms(g, view.cache.weights[k], ex[k]).value;
    }
    total
}

/// Gradient of the ELBO in `d_u` and `μ_u`. Entries for parameters the variant
/// freezes are exactly zero.
pub fn grad_local(local: &LocalState, view: &GlobalView<'_>) -> (Vec<f64>, f64) {
    let v = view.variant();
    let link = v.link();
    let ex = mean_x(local);
    let dim = view.state.dim;
    let mut grad_d = vec![0.0; dim];
    let mut grad_mu = 0.0;
    if !v.uses_row_mean() {
        return (grad_d, grad_mu);
    }
    if v.uses_locations() {
        for (gd, d) in grad_d.iter_mut().zip(&local.d) {
            *gd = -d;
        }
    }
    grad_mu -= local.mu / view.config.sigma_m2;
    for k in 0..view.n_components() {
        let g = g_unchecked(local, view, k);
        let d1 = link.terms(g, view.cache.weights[k], ex[k]).d1;
        grad_mu += d1;
        if v.uses_locations() {
            for (gd, l) in grad_d.iter_mut().zip(view.state.location(k)) {
                *gd += d1 * l;
            }
        }
    }
    (grad_d, grad_mu)
}

/// One damped Newton step on the free entries of `(d_u, μ_u)` with `q(x)` held
/// fixed. Falls back to the gradient direction when the Hessian is not
/// negative definite. Returns the largest absolute parameter change.
pub fn newton_step_local(local: &mut LocalState, view: &GlobalView<'_>) -> Result<f64> {
    let v = view.variant();
    if !v.uses_row_mean() {
        return Ok(0.0);
    }
    let link = v.link();
    let dim = if v.uses_locations() { view.state.dim } else { 0 };
    let n = dim + 1;
    let ex = mean_x(local);

    // free parameters ordered (d_0..d_{D-1}, μ)
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..dim {
        grad[j] = -local.d[j];
        hess[(j, j)] = -1.0;
    }
    grad[dim] = -local.mu / view.config.sigma_m2;
    hess[(dim, dim)] = -1.0 / view.config.sigma_m2;
    let mut feature = vec![1.0; n];
    for k in 0..view.n_components() {
        let g = g_unchecked(local, view, k);
        let terms = link.terms(g, view.cache.weights[k], ex[k]);
        feature[..dim].copy_from_slice(&view.state.location(k)[..dim]);
        for a in 0..n {
            grad[a] += terms.d1 * feature[a];
            for b in 0..=a {
                hess[(a, b)] += terms.d2 * feature[a] * feature[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            hess[(b, a)] = hess[(a, b)];
        }
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("row gradient".into()));
    }
    let direction = match (-hess).cholesky() {
        Some(chol) => chol.solve(&grad),
        None => grad.clone(),
    };
    let slope = grad.dot(&direction);
    if !(slope > 0.0) {
        return Ok(0.0);
    }

    let start = local_gp_objective(local, view);
    let (d0, mu0) = (local.d.clone(), local.mu);
    let mut step = 1.0;
    for _ in 0..MAX_HALVINGS {
        for j in 0..dim {
            local.d[j] = d0[j] + step * direction[j];
        }
        local.mu = mu0 + step * direction[dim];
        let value = local_gp_objective(local, view);
        if value.is_finite() && value >= start + ARMIJO * step * slope {
            let change = (0..n).map(|j| (step * direction[j]).abs()).fold(0.0, f64::max);
            return Ok(change);
        }
        step *= 0.5;
    }
    local.d = d0;
    local.mu = mu0;
    Ok(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SparseCountMatrix;
    use crate::model::{GlobalState, ModelConfig, Variant};

    fn config(variant: Variant) -> ModelConfig {
        ModelConfig {
            truncation: 3,
            dim: 2,
            sigma_l2: 0.5,
            variant,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn g_is_a_dot_product() {
        let c = ModelConfig {
            truncation: 1,
            ..config(Variant::Cnpf)
        };
        let mut g = GlobalState::init(&c, 2, 0).unwrap();
        g.locations = vec![3.0, 4.0];
        let view = GlobalView::new(&c, &g);
        let mut local = LocalState::prior(&view);
        assert_eq!(g_linear(&local, &view, 0).unwrap(), 0.0);
        local.d = vec![1.0, 2.0];
        local.mu = 0.5;
        assert_eq!(g_linear(&local, &view, 0).unwrap(), 11.5);
        local.d = vec![1.0];
        assert!(g_linear(&local, &view, 0).is_err());
    }

    #[test]
    fn hgp_ignores_row_parameters() {
        let c = config(Variant::Hgp);
        let g = GlobalState::init(&c, 2, 0).unwrap();
        let view = GlobalView::new(&c, &g);
        let mut local = LocalState::prior(&view);
        local.d = vec![1.0, 2.0];
        local.mu = 0.5;
        for k in 0..3 {
            assert_eq!(g_linear(&local, &view, k).unwrap(), 0.0);
        }
        let (gd, gm) = grad_local(&local, &view);
        assert!(gd.iter().all(|&v| v == 0.0) && gm == 0.0);

        let c = config(Variant::ScaledHgp);
        let view = GlobalView::new(&c, &g);
        for k in 0..3 {
            assert_eq!(g_linear(&local, &view, k).unwrap(), 0.5);
        }
        assert!(grad_local(&local, &view).0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phi_single_component_and_symmetry() {
        let m = SparseCountMatrix::from_triplets(1, 2, vec![(0, 0, 3), (0, 1, 1)]).unwrap();
        let c = ModelConfig {
            truncation: 1,
            ..config(Variant::Cnpf)
        };
        let g = GlobalState::init(&c, 2, 0).unwrap();
        let view = GlobalView::new(&c, &g);
        let mut local = LocalState::prior(&view);
        update_phi(&mut local, &view, m.row(0)).unwrap();
        assert_eq!(local.phi, vec![1.0, 1.0]);

        let c = config(Variant::Cnpf);
        let mut g = GlobalState::init(&c, 2, 0).unwrap();
        g.atom_shape = vec![0.5; 6];
        let view = GlobalView::new(&c, &g);
        let mut local = LocalState::prior(&view);
        local.x_shape = vec![2.0; 3];
        local.x_rate = vec![1.5; 3];
        update_phi(&mut local, &view, m.row(0)).unwrap();
        for p in &local.phi {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_survives_extreme_expectations() {
        let m = SparseCountMatrix::from_triplets(1, 2, vec![(0, 0, 3)]).unwrap();
        let c = config(Variant::Cnpf);
        let mut g = GlobalState::init(&c, 2, 0).unwrap();
        // component 0 dominates column 0's atoms, component 2 dominates the weights
        g.atom_shape = vec![50.0, 1.0, 1e-3, 1.0, 1e-3, 1.0];
        let view = GlobalView::new(&c, &g);
        let mut local = LocalState::prior(&view);
        local.x_shape = vec![1e-250, 1e-250, 40.0];
        local.x_rate = vec![1.0; 3];
        update_phi(&mut local, &view, m.row(0)).unwrap();
        let s: f64 = local.phi[..3].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(local.phi.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn update_x_examples() {
        let m = SparseCountMatrix::from_triplets(1, 2, vec![(0, 0, 3)]).unwrap();
        for (variant, want_rate) in [
            (Variant::Cnpf, 3.0),
            (Variant::SoftplusCnpf, 1.0 / std::f64::consts::LN_2 + 2.0),
        ] {
            let c = ModelConfig {
                truncation: 1,
                ..config(variant)
            };
            let mut g = GlobalState::init(&c, 2, 0).unwrap();
            g.sticks = vec![0.5];
            g.scale = 1.0;
            g.atom_shape = vec![1.0, 3.0];
            g.atom_rate = vec![1.0, 3.0];
            let view = GlobalView::new(&c, &g);
            let mut local = LocalState::prior(&view);
            update_phi(&mut local, &view, m.row(0)).unwrap();
            update_x(&mut local, &view, m.row(0));
            assert!((local.x_shape[0] - 3.5).abs() < 1e-14);
            assert!(
                (local.x_rate[0] - want_rate).abs() < 1e-12,
                "{variant}: {}",
                local.x_rate[0]
            );
        }
    }

    #[test]
    fn dw_cancels_at_matching_parameters() {
        let c = ModelConfig {
            truncation: 1,
            ..config(Variant::Cnpf)
        };
        let mut g = GlobalState::init(&c, 2, 0).unwrap();
        g.sticks = vec![0.5];
        g.scale = 2.0;
        let view = GlobalView::new(&c, &g);
        let mut local = LocalState::prior(&view);
        local.x_shape = vec![1.0];
        local.x_rate = vec![1.0];
        assert!(dw(&local, &view, 0).abs() < 1e-14);

        let cs = ModelConfig {
            variant: Variant::SoftplusCnpf,
            ..c.clone()
        };
        let view_s = GlobalView::new(&cs, &g);
        let diff = dw(&local, &view_s, 0) - dw(&local, &view, 0);
        assert!((diff + std::f64::consts::LN_2.ln()).abs() < 1e-14);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let c = config(Variant::Cnpf);
        let g = GlobalState::init(&c, 2, 0).unwrap();
        let view = GlobalView::new(&c, &g);
        let mut local = LocalState::prior(&view);
        // E[x_k] e^{g} = w_k with g = 0
        local.x_shape = view.cache.weights.iter().map(|w| 2.0 * w).collect();
        local.x_rate = vec![2.0; 3];
        let (gd, gm) = grad_local(&local, &view);
        assert!(gd.iter().all(|v| v.abs() < 1e-15));
        assert!(gm.abs() < 1e-15);
    }

    #[test]
    fn newton_step_increases_objective() {
        for variant in [Variant::Cnpf, Variant::SoftplusCnpf, Variant::ScaledHgp] {
            let c = config(variant);
            let mut g = GlobalState::init(&c, 2, 4).unwrap();
            g.locations = vec![0.8, -0.3, 0.1, 0.9, -0.5, -0.4];
            let view = GlobalView::new(&c, &g);
            let mut local = LocalState::prior(&view);
            local.x_shape = vec![4.0, 0.2, 1.5];
            local.x_rate = vec![1.0; 3];
            let mut last = local_gp_objective(&local, &view);
            for _ in 0..20 {
                newton_step_local(&mut local, &view).unwrap();
                let now = local_gp_objective(&local, &view);
                assert!(now >= last - 1e-12, "{variant}: {now} < {last}");
                last = now;
            }
            let (gd, gm) = grad_local(&local, &view);
            assert!(gd.iter().all(|v| v.abs() < 1e-8), "{variant}: {gd:?}");
            assert!(gm.abs() < 1e-8);
        }
    }
}
