//! Minimizers for the volatility profile loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::loss::ProfileObjective;
use crate::error::{Error, Result};
use crate::numerics::{factor_spd, JitterPolicy};

/// Smooth objective in `σ̄`.
pub trait SigmaObjective {
    fn value(&self, sigma: &DVector<f64>) -> Result<f64>;
    fn value_grad(&self, sigma: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
    fn hessian(&self, sigma: &DVector<f64>) -> Result<DMatrix<f64>>;
}

impl SigmaObjective for ProfileObjective<'_> {
    fn value(&self, sigma: &DVector<f64>) -> Result<f64> {
        ProfileObjective::value(self, sigma)
    }

    fn value_grad(&self, sigma: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        ProfileObjective::value_grad(self, sigma)
    }

    fn hessian(&self, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        ProfileObjective::hessian(self, sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Optimizer {
    /// Gradient steps of relative size at most `p%`, `p ← 0.9p` on failure.
    #[default]
    NormBoundedGD,
    /// Regularized Newton direction with Armijo backtracking.
    NewtonArmijo,
}

/// Optimizer settings shared by both methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub optimizer: Optimizer,
    pub gd_max_iters: usize,
    /// Initial step bound in percent of `‖σ̄‖`.
    pub gd_p_init: f64,
    pub gd_p_floor: f64,
    pub newton_grad_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::NormBoundedGD,
            gd_max_iters: 100_000,
            gd_p_init: 1.0,
            gd_p_floor: 1e-20,
            newton_grad_tol: 1e-8,
            newton_max_iters: 1000,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gd_p_init", self.gd_p_init),
            ("gd_p_floor", self.gd_p_floor),
            ("newton_grad_tol", self.newton_grad_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Outcome of a minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimization {
    pub sigma: DVector<f64>,
    /// Loss at the start and after every accepted step; strictly decreasing.
    pub loss_trace: Vec<f64>,
    /// Attempted steps, accepted or not.
    pub iterations: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const MIN_ARMIJO_STEP: f64 = 1e-20;
/// Newton decrement `−gᵀd` below this multiple of `|L|` stops the iteration.
const DECREMENT_FLOOR: f64 = 16.0 * f64::EPSILON;
/// Hessian shifts tried, relative to the mean absolute Hessian diagonal.
const HESSIAN_SHIFTS: [f64; 13] = [
    0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0,
];

pub fn minimize<O: SigmaObjective + ?Sized>(
    objective: &O,
    init: DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<Minimization> {
    settings.validate()?;
    match settings.optimizer {
        Optimizer::NormBoundedGD => norm_bounded_gd(objective, init, settings),
        Optimizer::NewtonArmijo => newton_armijo(objective, init, settings),
    }
}

fn norm_bounded_gd<O: SigmaObjective + ?Sized>(
    objective: &O,
    mut sigma: DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<Minimization> {
    let (mut loss, mut grad) = objective.value_grad(&sigma)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut trace = vec![loss];
    let mut p = settings.gd_p_init;
    let mut iterations = 0;
    while iterations < settings.gd_max_iters && p >= settings.gd_p_floor {
        let gnorm = grad.norm();
        if !gnorm.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iterations,
            });
        }
        if gnorm < settings.newton_grad_tol {
            break;
        }
        iterations += 1;
        let radius = p / 100.0 * sigma.norm().max(1e-12);
        let candidate = &sigma - &grad * (radius / gnorm);
        match objective.value_grad(&candidate) {
            Ok((l, g)) if l.is_finite() && l < loss => {
                sigma = candidate;
                loss = l;
                grad = g;
                trace.push(l);
            }
            _ => p *= 0.9,
        }
    }
    Ok(Minimization {
        sigma,
        loss_trace: trace,
        iterations,
    })
}

fn newton_direction(h: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let policy = JitterPolicy {
        ladder: HESSIAN_SHIFTS.to_vec(),
        relative: true,
    };
    if let Ok(f) = factor_spd(h, &policy) {
        if let Ok(step) = f.solve_vec(grad) {
            let d = -step;
            if d.iter().all(|v| v.is_finite()) && d.dot(grad) < 0.0 {
                return d;
            }
        }
    }
    -grad.clone()
}

fn newton_armijo<O: SigmaObjective + ?Sized>(
    objective: &O,
    mut sigma: DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<Minimization> {
    let (mut loss, mut grad) = objective.value_grad(&sigma)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut trace = vec![loss];
    let mut iterations = 0;
    while iterations < settings.newton_max_iters {
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: iterations,
            });
        }
        if grad.norm() < settings.newton_grad_tol {
            break;
        }
        iterations += 1;
        let h = objective.hessian(&sigma)?;
        let dir = newton_direction(&h, &grad);
        let slope = grad.dot(&dir);
        // No representable decrease is left.
        if -slope <= DECREMENT_FLOOR * loss.abs().max(1.0) {
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t >= MIN_ARMIJO_STEP {
            let candidate = &sigma + &dir * t;
            if let Ok(l) = objective.value(&candidate) {
                if l.is_finite() && l <= loss + ARMIJO_C1 * t * slope && l < loss {
                    accepted = Some(candidate);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(next) = accepted else { break };
        let (l, g) = objective.value_grad(&next)?;
        sigma = next;
        loss = l;
        grad = g;
        trace.push(l);
    }
    Ok(Minimization {
        sigma,
        loss_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Σ (σ_i − 2)²`.
    struct Bowl;

    impl SigmaObjective for Bowl {
        fn value(&self, s: &DVector<f64>) -> Result<f64> {
            Ok(s.iter().map(|v| (v - 2.0).powi(2)).sum())
        }
        fn value_grad(&self, s: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
            Ok((self.value(s)?, s.map(|v| 2.0 * (v - 2.0))))
        }
        fn hessian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(s.len(), s.len()) * 2.0)
        }
    }

    /// `σ⁴/4 − σ²`, indefinite near the origin.
    struct DoubleWell;

    impl SigmaObjective for DoubleWell {
        fn value(&self, s: &DVector<f64>) -> Result<f64> {
            Ok(s.iter().map(|v| v.powi(4) / 4.0 - v * v).sum())
        }
        fn value_grad(&self, s: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
            Ok((self.value(s)?, s.map(|v| v.powi(3) - 2.0 * v)))
        }
        fn hessian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_diagonal(&s.map(|v| 3.0 * v * v - 2.0)))
        }
    }

    fn settings(optimizer: Optimizer) -> OptimizerSettings {
        OptimizerSettings {
            optimizer,
            ..Default::default()
        }
    }

    #[test]
    fn injected_quadratic_converges_for_both() {
        for opt in [Optimizer::NormBoundedGD, Optimizer::NewtonArmijo] {
            let m = minimize(&Bowl, DVector::from_element(1, 0.5), &settings(opt)).unwrap();
            assert!((m.sigma[0] - 2.0).abs() < 1e-6, "{opt:?}: {}", m.sigma[0]);
            assert!(m.loss_trace.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn starting_at_minimum_returns_immediately() {
        for opt in [Optimizer::NormBoundedGD, Optimizer::NewtonArmijo] {
            let m = minimize(&Bowl, DVector::from_element(3, 2.0), &settings(opt)).unwrap();
            assert_eq!(m.loss_trace.len(), 1);
            assert_eq!(m.iterations, 0);
        }
    }

    #[test]
    fn newton_escapes_indefinite_region() {
        let m = minimize(
            &DoubleWell,
            DVector::from_element(1, 0.3),
            &settings(Optimizer::NewtonArmijo),
        )
        .unwrap();
        assert!((m.sigma[0].abs() - 2f64.sqrt()).abs() < 1e-6, "{}", m.sigma[0]);
    }

    #[test]
    fn gd_respects_iteration_cap() {
        let s = OptimizerSettings {
            gd_max_iters: 7,
            ..Default::default()
        };
        let m = minimize(&Bowl, DVector::from_element(2, 1.0), &s).unwrap();
        assert_eq!(m.iterations, 7);
    }

    #[test]
    fn rejects_non_finite_start() {
        struct Nan;
        impl SigmaObjective for Nan {
            fn value(&self, _: &DVector<f64>) -> Result<f64> {
                Ok(f64::NAN)
            }
            fn value_grad(&self, s: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
                Ok((f64::NAN, s.clone()))
            }
            fn hessian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
                Ok(DMatrix::identity(s.len(), s.len()))
            }
        }
        assert!(matches!(
            minimize(&Nan, DVector::from_element(1, 1.0), &Default::default()),
            Err(Error::NonFiniteLoss { iteration: 0 })
        ));
    }
}
