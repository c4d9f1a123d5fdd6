//! Special functions, link transforms, gamma expectations and samplers.

mod gamma;
pub mod sample;
mod special;

pub use gamma::{gamma_expectations, log_gamma_density, GammaExpectations, GammaParams};
pub use special::{
    digamma, digamma_unchecked, inv_softplus, log_factorial, log_gamma, log_gamma_unchecked, logit, sigmoid,
    softplus, trigamma_unchecked,
};

/// Log density of N(x; 0, variance).
#[inline]
pub fn log_normal_density(x: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - 0.5 * x * x / variance
}

/// Log density of N(v; 0, variance I).
pub fn log_isotropic_normal_density(v: &[f64], variance: f64) -> f64 {
    let sq: f64 = v.iter().map(|x| x * x).sum();
    -0.5 * v.len() as f64 * (2.0 * std::f64::consts::PI * variance).ln() - 0.5 * sq / variance
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn digamma_recurrence(x in 1e-3f64..1e6) {
            let lhs = digamma(x + 1.0).unwrap();
            let rhs = digamma(x).unwrap() + 1.0 / x;
            let scale = lhs.abs().max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "x={} lhs={} rhs={}", x, lhs, rhs);
        }

        #[test]
        fn log_gamma_is_convex(x in 1e-2f64..1e4) {
            let h = 1e-3 * x;
            let second = log_gamma(x + h).unwrap() - 2.0 * log_gamma(x).unwrap() + log_gamma(x - h).unwrap();
            prop_assert!(second > 0.0, "x={} second difference {}", x, second);
        }

        #[test]
        fn softplus_roundtrip(x in -30.0f64..200.0) {
            let y = softplus(x);
            prop_assert!(y > 0.0);
            prop_assert!((inv_softplus(y) - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn isotropic_density_matches_product() {
        let v = [0.3, -1.2, 2.0];
        let direct: f64 = v.iter().map(|x| log_normal_density(*x, 0.7)).sum();
        assert!((log_isotropic_normal_density(&v, 0.7) - direct).abs() < 1e-13);
    }
}
