//! Box-constrained minimization of a noisy black-box objective with a
//! Matérn-5/2 GP surrogate and Expected Improvement.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{factor_spd, JitterPolicy, SpdFactor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesOptConfig {
    pub budget: usize,
    pub seed: u64,
    /// Space-filling points evaluated before the surrogate is used.
    pub n_initial: usize,
    pub n_candidates: usize,
    /// Gaussian perturbations of the incumbent added to the candidate pool.
    pub n_local: usize,
    /// Standard deviation of local perturbations, as a fraction of each width.
    pub local_scale: f64,
}

impl Default for BayesOptConfig {
    fn default() -> Self {
        Self {
            budget: 75,
            seed: 0,
            n_initial: 10,
            n_candidates: 1024,
            n_local: 64,
            local_scale: 0.05,
        }
    }
}

/// One objective call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub theta: Vec<f64>,
    /// What the objective returned; may be non-finite.
    pub raw: f64,
    /// Value given to the surrogate.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOptOutcome {
    pub best_theta: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<Evaluation>,
}

impl BayesOptOutcome {
    /// Lowest value seen up to and including each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|e| {
                best = best.min(e.value);
                best
            })
            .collect()
    }
}

const PENALTY_FLOOR: f64 = 1e6;
const NUGGET_FACTOR: f64 = 1e-6;
/// Surrogate lengthscales tried, in units of the normalized box.
const LENGTHSCALE_GRID: [f64; 9] = [0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0];

/// Minimizes `objective(iter, θ)` over `bounds`.
///
/// `initial` (if any) is evaluated first and counts towards the design.
pub fn bayes_opt_minimize<F>(
    mut objective: F,
    bounds: &[(f64, f64)],
    initial: Option<&[f64]>,
    config: &BayesOptConfig,
) -> Result<BayesOptOutcome>
where
    F: FnMut(usize, &[f64]) -> f64,
{
    if config.budget == 0 {
        return Err(Error::BudgetTooSmall { budget: 0 });
    }
    if bounds.is_empty() {
        return Err(Error::EmptyInput("search bounds"));
    }
    if let Some((i, _)) = bounds
        .iter()
        .enumerate()
        .find(|(_, (lo, hi))| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(Error::InvalidInput(format!("bad bounds in dimension {i}")));
    }
    if let Some(x) = initial {
        if x.len() != bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: bounds.len(),
                got: x.len(),
            });
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let n_init = config.n_initial.clamp(1, config.budget);
    let mut design = Vec::with_capacity(n_init);
    if let Some(x) = initial {
        design.push(clamp_to(x, bounds));
    }
    let lhs = latin_hypercube(n_init - design.len(), bounds, &mut rng);
    design.extend(lhs);

    let mut history: Vec<Evaluation> = Vec::with_capacity(config.budget);
    let record = |history: &mut Vec<Evaluation>, theta: Vec<f64>, raw: f64| {
        let value = if raw.is_finite() {
            raw
        } else {
            penalty(history)
        };
        history.push(Evaluation { theta, raw, value });
    };

    for theta in design {
        let raw = objective(history.len(), &theta);
        record(&mut history, theta, raw);
    }
    while history.len() < config.budget {
        let theta = propose(&history, bounds, config, &mut rng);
        let raw = objective(history.len(), &theta);
        record(&mut history, theta, raw);
    }

    let best = history
        .iter()
        .filter(|e| e.raw.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .or_else(|| history.first())
        .expect("budget is positive");
    Ok(BayesOptOutcome {
        best_theta: best.theta.clone(),
        best_value: best.value,
        history,
    })
}

/// `10 ×` the worst finite value so far, at least `1e6`.
fn penalty(history: &[Evaluation]) -> f64 {
    let worst = history
        .iter()
        .filter(|e| e.raw.is_finite())
        .map(|e| e.raw.abs())
        .fold(0.0, f64::max);
    (10.0 * worst).max(PENALTY_FLOOR)
}

fn clamp_to(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter().zip(bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()
}

/// One point per stratum in every coordinate, strata shuffled independently.
fn latin_hypercube<R: Rng>(n: usize, bounds: &[(f64, f64)], rng: &mut R) -> Vec<Vec<f64>> {
    use rand::seq::SliceRandom;
    let mut pts = vec![vec![0.0; bounds.len()]; n];
    for (j, (lo, hi)) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            pts[i][j] = lo + u * (hi - lo);
        }
    }
    pts
}

/// GP surrogate on the unit box with standardized targets.
struct Surrogate {
    x: Vec<Vec<f64>>,
    lengthscale: f64,
    amplitude: f64,
    mean: f64,
    scale: f64,
    factor: SpdFactor,
    alpha: DVector<f64>,
}

fn matern52(r: f64, l: f64) -> f64 {
    let s = 5f64.sqrt() * r / l;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Surrogate {
    fn fit(x: Vec<Vec<f64>>, y: &[f64]) -> Option<Self> {
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let z = DVector::from_iterator(n, y.iter().map(|v| (v - mean) / scale));
        let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
        let nugget = (NUGGET_FACTOR * (hi - lo)).max(1e-10);

        let mut best: Option<(f64, Self)> = None;
        for &l in &LENGTHSCALE_GRID {
            let k = DMatrix::from_fn(n, n, |i, j| {
                matern52(dist(&x[i], &x[j]), l) + if i == j { nugget } else { 0.0 }
            });
            let Ok(factor) = factor_spd(&k, &JitterPolicy::default()) else {
                continue;
            };
            let Ok(alpha) = factor.solve_vec(&z) else {
                continue;
            };
            // Amplitude profiled out: a = zᵀK⁻¹z / n.
            let amplitude = (z.dot(&alpha) / n as f64).max(1e-12);
            let lml = -0.5 * n as f64 * amplitude.ln() - 0.5 * factor.log_det();
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((
                    lml,
                    Self {
                        x: x.clone(),
                        lengthscale: l,
                        amplitude,
                        mean,
                        scale,
                        factor,
                        alpha,
                    },
                ));
            }
        }
        best.map(|(_, s)| s)
    }

    /// Predictive mean and standard deviation in objective units.
    fn predict(&self, q: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| matern52(dist(xi, q), self.lengthscale)),
        );
        let mu = k.dot(&self.alpha);
        let v = self
            .factor
            .half_solve(&k)
            .map(|w| (1.0 - w.norm_squared()).max(0.0))
            .unwrap_or(1.0);
        let sd = (self.amplitude * v).sqrt();
        (self.mean + self.scale * mu, self.scale * sd)
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best`.
fn expected_improvement(mu: f64, sd: f64, best: f64) -> f64 {
    if sd <= 0.0 {
        return (best - mu).max(0.0);
    }
    let z = (best - mu) / sd;
    (best - mu) * normal_cdf(z) + sd * normal_pdf(z)
}

fn propose<R: Rng>(
    history: &[Evaluation],
    bounds: &[(f64, f64)],
    config: &BayesOptConfig,
    rng: &mut R,
) -> Vec<f64> {
    let to_unit = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(bounds)
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
            .collect()
    };
    let from_unit = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect()
    };

    let d = bounds.len();
    let mut candidates: Vec<Vec<f64>> = (0..config.n_candidates)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let incumbent = history
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .map(|e| to_unit(&e.theta))
        .expect("design evaluated before proposals");
    let jitter = Normal::new(0.0, config.local_scale).expect("positive scale");
    for _ in 0..config.n_local {
        candidates.push(
            incumbent
                .iter()
                .map(|v| (v + jitter.sample(rng)).clamp(0.0, 1.0))
                .collect(),
        );
    }

    let xs: Vec<Vec<f64>> = history.iter().map(|e| to_unit(&e.theta)).collect();
    let ys: Vec<f64> = history.iter().map(|e| e.value).collect();
    let Some(gp) = Surrogate::fit(xs, &ys) else {
        return from_unit(&candidates[0]);
    };
    let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut top = (f64::NEG_INFINITY, 0);
    for (i, c) in candidates.iter().enumerate() {
        let (mu, sd) = gp.predict(c);
        let ei = expected_improvement(mu, sd, best);
        if ei > top.0 {
            top = (ei, i);
        }
    }
    from_unit(&candidates[top.1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(budget: usize, seed: u64) -> BayesOptConfig {
        BayesOptConfig {
            budget,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn one_dimensional_bowl() {
        let out = bayes_opt_minimize(|_, t| (t[0] - 2.0).powi(2), &[(0.0, 5.0)], None, &cfg(30, 3)).unwrap();
        assert!((out.best_theta[0] - 2.0).abs() < 0.2, "{:?}", out.best_theta);
        assert_eq!(out.history.len(), 30);
    }

    #[test]
    fn two_dimensional_bowl() {
        let f = |_: usize, t: &[f64]| (t[0] - 1.0).powi(2) + (t[1] + 1.0).powi(2);
        let out = bayes_opt_minimize(f, &[(-3.0, 3.0), (-3.0, 3.0)], None, &cfg(60, 5)).unwrap();
        assert!(out.best_value < 0.1, "{}", out.best_value);
    }

    #[test]
    fn constant_objective_stays_in_bounds() {
        let b = [(-1.0, 2.0), (10.0, 11.0)];
        let out = bayes_opt_minimize(|_, _| 4.0, &b, None, &cfg(15, 0)).unwrap();
        assert_eq!(out.history.len(), 15);
        for e in &out.history {
            for (v, (lo, hi)) in e.theta.iter().zip(&b) {
                assert!(v >= lo && v <= hi);
            }
        }
    }

    #[test]
    fn deterministic_and_monotone_best() {
        let f = |_: usize, t: &[f64]| (t[0] * 3.0).sin() + t[0] * t[0] * 0.1;
        let a = bayes_opt_minimize(f, &[(-4.0, 4.0)], None, &cfg(25, 9)).unwrap();
        let b = bayes_opt_minimize(f, &[(-4.0, 4.0)], None, &cfg(25, 9)).unwrap();
        assert_eq!(a, b);
        assert!(a.best_so_far().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn initial_point_comes_first_and_budget_one_returns_it() {
        let out = bayes_opt_minimize(|_, t| t[0], &[(0.0, 1.0)], Some(&[0.25]), &cfg(1, 0)).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_theta, vec![0.25]);
    }

    #[test]
    fn non_finite_values_are_penalized() {
        let f = |_: usize, t: &[f64]| if t[0] > 0.5 { f64::NAN } else { -t[0] };
        let out = bayes_opt_minimize(f, &[(0.0, 1.0)], None, &cfg(20, 2)).unwrap();
        assert!(out.best_value.is_finite() && out.best_theta[0] <= 0.5);
        for e in out.history.iter().filter(|e| !e.raw.is_finite()) {
            assert!(e.value >= PENALTY_FLOOR);
        }
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(matches!(
            bayes_opt_minimize(|_, _| 0.0, &[(0.0, 1.0)], None, &cfg(0, 0)),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn ei_is_nonnegative_and_grows_with_spread() {
        assert!(expected_improvement(1.0, 0.0, 0.0) == 0.0);
        assert!(expected_improvement(1.0, 2.0, 0.0) > expected_improvement(1.0, 1.0, 0.0));
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
    }
}
