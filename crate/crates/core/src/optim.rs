//! Step-size schedules, RMSProp preconditioning and constrained updates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mathfn::{inv_softplus, logit, sigmoid, softplus};

/// Smallest value a positive parameter may take after a step.
pub const POSITIVE_FLOOR: f64 = 1e-10;
/// Distance kept between a unit-interval parameter and either endpoint.
pub const UNIT_MARGIN: f64 = 1e-10;
/// Floor on the RMSProp denominator.
pub const RMS_FLOOR: f64 = 1e-16;

/// Robbins-Monro step sizes `(offset + t)^{-exponent}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobbinsMonroSchedule {
    pub offset: f64,
    pub exponent: f64,
}

impl RobbinsMonroSchedule {
    pub fn new(offset: f64, exponent: f64) -> Result<Self> {
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::invalid(format!(
                "rate offset must be positive, got {offset}"
            )));
        }
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(Error::invalid(format!(
                "rate exponent must lie in (0.5, 1], got {exponent}"
            )));
        }
        Ok(RobbinsMonroSchedule { offset, exponent })
    }

    pub fn rate(&self, t: u64) -> f64 {
        (self.offset + t as f64).powf(-self.exponent)
    }
}

impl Default for RobbinsMonroSchedule {
    fn default() -> Self {
        RobbinsMonroSchedule {
            offset: 100.0,
            exponent: 0.9,
        }
    }
}

/// Running second moment of the gradient, one entry per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub mean_square: Vec<f64>,
    pub tau: f64,
    initialized: bool,
}

impl RmsPropState {
    pub fn new(n: usize, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")));
        }
        Ok(RmsPropState {
            mean_square: vec![0.0; n],
            tau,
            initialized: false,
        })
    }

    /// Updates `ĝ² ← (1 − τ) ĝ² + τ g²` and returns `η g / √ĝ²`. The first call
    /// sets `ĝ² = g²`, so the first step has magnitude `η` per coordinate.
    pub fn step(&mut self, grad: &[f64], eta: f64) -> Result<Vec<f64>> {
        if grad.len() != self.mean_square.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean_square.len(),
                got: grad.len(),
            });
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        for (ms, g) in self.mean_square.iter_mut().zip(grad) {
            *ms = if self.initialized {
                (1.0 - self.tau) * *ms + self.tau * g * g
            } else {
                g * g
            };
        }
        self.initialized = true;
        Ok(grad
            .iter()
            .zip(&self.mean_square)
            .map(|(g, ms)| eta * g / ms.sqrt().max(RMS_FLOOR))
            .collect())
    }
}

/// How a parameter maps to the unconstrained coordinate the optimizer moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reparam {
    Real,
    /// `x = softplus(z)`.
    Positive,
    /// `x = sigmoid(z)`.
    Unit,
}

impl Reparam {
    pub fn to_unconstrained(self, x: f64) -> f64 {
        match self {
            Reparam::Real => x,
            Reparam::Positive => inv_softplus(x),
            Reparam::Unit => logit(x),
        }
    }

    pub fn from_unconstrained(self, z: f64) -> f64 {
        match self {
            Reparam::Real => z,
            Reparam::Positive => softplus(z).max(POSITIVE_FLOOR),
            Reparam::Unit => sigmoid(z).clamp(UNIT_MARGIN, 1.0 - UNIT_MARGIN),
        }
    }

    /// Moves `x` by `step` in the unconstrained coordinate.
    pub fn apply(self, x: f64, step: f64) -> f64 {
        self.from_unconstrained(self.to_unconstrained(x) + step)
    }
}

/// Preconditioner choice for a block of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    Identity,
    RmsProp,
    Hessian,
}

/// Solves `(−H) δ = g` by Cholesky factorization; `None` when `−H` is not
/// positive definite. `hessian` is row-major `n × n`.
pub fn newton_direction(grad: &[f64], hessian: &[f64]) -> Option<Vec<f64>> {
    let n = grad.len();
    if hessian.len() != n * n {
        return None;
    }
    let neg = DMatrix::from_row_slice(n, n, hessian).map(|v| -v);
    let chol = neg.cholesky()?;
    let delta = chol.solve(&DVector::from_column_slice(grad));
    if delta.iter().all(|v| v.is_finite()) {
        Some(delta.iter().copied().collect())
    } else {
        None
    }
}

/// Applies one preconditioned ascent step to `params` in place.
///
/// `Hessian` uses the Newton direction scaled by `eta` and falls back to
/// RMSProp (which must then be supplied) when the Hessian is not negative
/// definite. Returns the preconditioner actually used.
pub fn apply_preconditioned_update(
    params: &mut [f64],
    grad: &[f64],
    reparam: Reparam,
    preconditioner: Preconditioner,
    eta: f64,
    hessian: Option<&[f64]>,
    rms: Option<&mut RmsPropState>,
) -> Result<Preconditioner> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    let (step, used) = match preconditioner {
        Preconditioner::Identity => (grad.iter().map(|g| eta * g).collect(), Preconditioner::Identity),
        Preconditioner::Hessian => {
            let hessian = hessian.ok_or_else(|| Error::invalid("Hessian preconditioner needs a Hessian"))?;
            match newton_direction(grad, hessian) {
                Some(delta) => (delta.iter().map(|d| eta * d).collect(), Preconditioner::Hessian),
                None => {
                    log::debug!("Hessian not negative definite; using RMSProp for this block");
                    let rms = rms.ok_or_else(|| {
                        Error::Degenerate("Hessian not negative definite and no fallback".into())
                    })?;
                    (rms.step(grad, eta)?, Preconditioner::RmsProp)
                }
            }
        }
        Preconditioner::RmsProp => {
            let rms = rms.ok_or_else(|| Error::invalid("RMSProp preconditioner needs its state"))?;
            (rms.step(grad, eta)?, Preconditioner::RmsProp)
        }
    };
    for (p, s) in params.iter_mut().zip(&step) {
        *p = reparam.apply(*p, *s);
    }
    Ok(used)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_values() {
        let s = RobbinsMonroSchedule::new(50.0, 0.9).unwrap();
        // mpmath: 100^-0.9
        assert!((s.rate(50) - 0.015_848_931_924_611_134).abs() < 1e-15);
        assert!(s.rate(51) < s.rate(50));
        assert!(RobbinsMonroSchedule::new(50.0, 0.5).is_err());
        assert!(RobbinsMonroSchedule::new(50.0, 1.1).is_err());
        assert!(RobbinsMonroSchedule::new(0.0, 0.9).is_err());
    }

    #[test]
    fn schedule_partial_sums_follow_robbins_monro() {
        // Σ rate grows without bound while Σ rate² levels off
        let s = RobbinsMonroSchedule::new(1.0, 0.9).unwrap();
        let sums = |n: u64| {
            (0..n).fold((0.0, 0.0), |(a, b), t| {
                let r = s.rate(t);
                (a + r, b + r * r)
            })
        };
        let (a1, b1) = sums(10_000);
        let (a2, b2) = sums(1_000_000);
        assert!(a2 > 1.5 * a1);
        assert!(b2 - b1 < 1e-3 * b1);
    }

    #[test]
    fn rmsprop_examples() {
        let mut r = RmsPropState::new(1, 1.0).unwrap();
        assert_eq!(r.step(&[4.0], 1.0).unwrap(), vec![1.0]);
        assert_eq!(r.mean_square, vec![16.0]);

        let mut r = RmsPropState::new(2, 0.1).unwrap();
        assert_eq!(r.step(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);

        let mut r = RmsPropState::new(2, 1.0).unwrap();
        let s = r.step(&[100.0, -1.0], 0.3).unwrap();
        assert!((s[0].abs() - s[1].abs()).abs() < 1e-15);
        assert!(r.step(&[1.0], 0.3).is_err());
    }

    #[test]
    fn rmsprop_moving_average() {
        let mut r = RmsPropState::new(1, 0.1).unwrap();
        r.step(&[2.0], 1.0).unwrap();
        let s = r.step(&[1.0], 1.0).unwrap();
        let ms = 0.9 * 4.0 + 0.1;
        assert!((r.mean_square[0] - ms).abs() < 1e-15);
        assert!((s[0] - 1.0 / ms.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identity_step_is_gradient_ascent() {
        let mut p = vec![1.0, -2.0];
        apply_preconditioned_update(
            &mut p,
            &[0.5, 1.0],
            Reparam::Real,
            Preconditioner::Identity,
            1.0,
            None,
            None,
        )
        .unwrap();
        assert_eq!(p, vec![1.5, -1.0]);
    }

    #[test]
    fn newton_solves_quadratic_in_one_step() {
        // f(x) = −½ (x − m)ᵀ A (x − m), gradient −A (x − m), Hessian −A
        let a = [3.0, 1.0, 1.0, 2.0];
        let m = [0.7, -1.3];
        let mut x = vec![0.0, 0.0];
        let grad = [
            -(a[0] * (x[0] - m[0]) + a[1] * (x[1] - m[1])),
            -(a[2] * (x[0] - m[0]) + a[3] * (x[1] - m[1])),
        ];
        let hess = a.map(|v| -v);
        let used = apply_preconditioned_update(
            &mut x,
            &grad,
            Reparam::Real,
            Preconditioner::Hessian,
            1.0,
            Some(&hess),
            None,
        )
        .unwrap();
        assert_eq!(used, Preconditioner::Hessian);
        assert!((x[0] - m[0]).abs() < 1e-14 && (x[1] - m[1]).abs() < 1e-14);
    }

    #[test]
    fn indefinite_hessian_falls_back() {
        let mut x = vec![0.0, 0.0];
        let mut rms = RmsPropState::new(2, 1.0).unwrap();
        let used = apply_preconditioned_update(
            &mut x,
            &[1.0, 1.0],
            Reparam::Real,
            Preconditioner::Hessian,
            0.1,
            Some(&[1.0, 0.0, 0.0, -1.0]),
            Some(&mut rms),
        )
        .unwrap();
        assert_eq!(used, Preconditioner::RmsProp);
        assert!((x[0] - 0.1).abs() < 1e-15);
        assert!(newton_direction(&[1.0], &[0.0]).is_none());
    }

    proptest! {
        #[test]
        fn steps_stay_in_domain(x in 1e-6f64..1e6, v in 1e-6f64..(1.0 - 1e-6), step in -1e6f64..1e6) {
            let p = Reparam::Positive.apply(x, step);
            prop_assert!(p > 0.0 && p.is_finite());
            let u = Reparam::Unit.apply(v, step);
            prop_assert!(u > 0.0 && u < 1.0);
        }

        #[test]
        fn rmsprop_steps_in_domain(grads in proptest::collection::vec(-1e12f64..1e12, 3), eta in 0.0f64..10.0) {
            let mut rms = RmsPropState::new(3, 0.1).unwrap();
            let mut p = vec![0.5, 2.0, 1e-3];
            apply_preconditioned_update(&mut p, &grads, Reparam::Positive, Preconditioner::RmsProp, eta, None, Some(&mut rms)).unwrap();
            prop_assert!(p.iter().all(|&v| v > 0.0 && v.is_finite()));
            let mut s = vec![0.2, 0.5, 0.9];
            let mut rms = RmsPropState::new(3, 0.1).unwrap();
            apply_preconditioned_update(&mut s, &grads, Reparam::Unit, Preconditioner::RmsProp, eta, None, Some(&mut rms)).unwrap();
            prop_assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
