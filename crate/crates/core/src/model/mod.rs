//! Correlated nonparametric Poisson factorization: configuration, variational
//! state, the evidence lower bound and its gradients.
//!
//! Each row `u` draws per-component weights
//! `x_uk ~ Gamma(w_k, rate(g_uk))` with `g_uk = d_u · ℓ_k + μ_u`, and each cell
//! `y_ui ~ Poisson(Σ_k x_uk a_ki)`. The stick weights `w_k`, scale, locations
//! `ℓ_k` and hyperparameters are point estimates; atoms `a_ki` and weights
//! `x_uk` have gamma variational factors.

mod elbo;
mod global;
mod local;
mod state;
mod sticks;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathfn::{sigmoid, softplus, GammaParams};

pub use elbo::{elbo, global_elbo, row_elbo};
pub use global::{global_gradient, GlobalGradient, RowStats};
pub use local::{dw, g_linear, grad_local, local_gp_objective, newton_step_local, update_phi, update_x};
pub use state::{restrict_variant, GlobalCache, GlobalState, GlobalView, LocalState};
pub use sticks::{blend_sticks, profiled_derivatives, profiled_objective, solve_sticks, StickParams};

/// Which model is fitted. The baselines are restrictions of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Hierarchical gamma process: locations and row means fixed at zero.
    Hgp,
    /// Locations fixed at zero; each row keeps a free log-scale `μ_u`.
    ScaledHgp,
    /// Full model with exponential link, rate `e^{-g}`.
    Cnpf,
    /// Full model with softplus link, rate `1 / softplus(g)`.
    SoftplusCnpf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Hgp,
        Variant::ScaledHgp,
        Variant::Cnpf,
        Variant::SoftplusCnpf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hgp => "hgp",
            Variant::ScaledHgp => "scaled-hgp",
            Variant::Cnpf => "cnpf",
            Variant::SoftplusCnpf => "softplus-cnpf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }

    /// Whether locations `ℓ_k` and row vectors `d_u` are free parameters.
    pub fn uses_locations(self) -> bool {
        matches!(self, Variant::Cnpf | Variant::SoftplusCnpf)
    }

    /// Whether the per-row mean `μ_u` is a free parameter.
    pub fn uses_row_mean(self) -> bool {
        !matches!(self, Variant::Hgp)
    }

    pub fn link(self) -> Link {
        match self {
            Variant::SoftplusCnpf => Link::Softplus,
            _ => Link::Exp,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Map from the Gaussian-process value `g` to the gamma rate of `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Exp,
    Softplus,
}

/// `ψ(g) = w log rate(g) − rate(g) E[x]` and its first two derivatives in `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTerms {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

fn log_softplus(g: f64) -> f64 {
    if g < -30.0 {
        g - 0.5 * g.exp()
    } else {
        softplus(g).ln()
    }
}

impl Link {
    #[inline]
    pub fn rate(self, g: f64) -> f64 {
        match self {
            Link::Exp => (-g).exp(),
            Link::Softplus => 1.0 / softplus(g),
        }
    }

    #[inline]
    pub fn log_rate(self, g: f64) -> f64 {
        match self {
            Link::Exp => -g,
            Link::Softplus => -log_softplus(g),
        }
    }

    #[inline]
    pub fn terms(self, g: f64, w: f64, mean_x: f64) -> LinkTerms {
        match self {
            Link::Exp => {
                let r = (-g).exp();
                LinkTerms {
                    value: -w * g - r * mean_x,
                    d1: -w + r * mean_x,
                    d2: -r * mean_x,
                }
            }
            Link::Softplus => {
                let s = softplus(g);
                let q = sigmoid(g);
                let dq = q * (1.0 - q);
                LinkTerms {
                    value: -w * log_softplus(g) - mean_x / s,
                    d1: q / s * (-w + mean_x / s),
                    d2: -w * (dq / s - q * q / (s * s)) + mean_x * (dq / (s * s) - 2.0 * q * q / (s * s * s)),
                }
            }
        }
    }
}

/// Model dimensions, priors and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of components kept by the truncated stick-breaking construction.
    pub truncation: usize,
    /// Dimension of the latent locations.
    pub dim: usize,
    /// Prior variance of each location coordinate.
    pub sigma_l2: f64,
    /// Prior variance of the per-row mean.
    pub sigma_m2: f64,
    /// Gamma prior on each atom entry `a_ki`.
    pub atom_prior: GammaParams,
    /// Gamma hyperprior on the gamma-process mass `α`.
    pub alpha_prior: GammaParams,
    /// Gamma hyperprior on the gamma-process rate `c`.
    pub c_prior: GammaParams,
    pub variant: Variant,
    /// Permit `sigma_l2 >= 1`, for which the prior has infinite expected mass.
    pub allow_divergent_prior: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            truncation: 200,
            dim: 25,
            sigma_l2: 1.0 / 250.0,
            sigma_m2: 1.0,
            atom_prior: GammaParams {
                shape: 0.01,
                rate: 10.0,
            },
            alpha_prior: GammaParams {
                shape: 1.0,
                rate: 0.01,
            },
            c_prior: GammaParams {
                shape: 1.0,
                rate: 0.01,
            },
            variant: Variant::Cnpf,
            allow_divergent_prior: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(Error::invalid("truncation must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("location dimension must be at least 1"));
        }
        for (name, v) in [("sigma_l2", self.sigma_l2), ("sigma_m2", self.sigma_m2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        self.atom_prior.validate()?;
        self.alpha_prior.validate()?;
        self.c_prior.validate()?;
        if self.variant.uses_locations() && self.sigma_l2 >= 1.0 && !self.allow_divergent_prior {
            return Err(Error::invalid(format!(
                "sigma_l2 = {} >= 1 gives a prior with infinite expected mass; \
                 set allow_divergent_prior to override",
                self.sigma_l2
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn link_derivatives_match_finite_differences() {
        for link in [Link::Exp, Link::Softplus] {
            for &(g, w, ex) in &[(0.3, 0.7, 2.0), (-1.5, 0.1, 0.4), (2.5, 1.3, 9.0)] {
                let t = link.terms(g, w, ex);
                let d1 = fd(|g| link.terms(g, w, ex).value, g);
                let d2 = fd(|g| link.terms(g, w, ex).d1, g);
                assert!(
                    (t.d1 - d1).abs() < 1e-7 * d1.abs().max(1.0),
                    "{link:?} d1 {} vs {d1}",
                    t.d1
                );
                assert!(
                    (t.d2 - d2).abs() < 1e-7 * d2.abs().max(1.0),
                    "{link:?} d2 {} vs {d2}",
                    t.d2
                );
                let value = w * link.log_rate(g) - link.rate(g) * ex;
                assert!((t.value - value).abs() < 1e-12 * value.abs().max(1.0));
            }
        }
    }

    #[test]
    fn variant_flags() {
        assert!(!Variant::Hgp.uses_row_mean());
        assert!(Variant::ScaledHgp.uses_row_mean());
        assert!(!Variant::ScaledHgp.uses_locations());
        assert_eq!(Variant::SoftplusCnpf.link(), Link::Softplus);
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("lda").is_err());
    }

    #[test]
    fn divergent_prior_needs_override() {
        let mut c = ModelConfig {
            sigma_l2: 1.5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        c.allow_divergent_prior = true;
        c.validate().unwrap();
        c.allow_divergent_prior = false;
        c.variant = Variant::Hgp;
        c.validate().unwrap();
    }
}
