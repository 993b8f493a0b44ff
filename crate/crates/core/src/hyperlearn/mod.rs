//! Hyperparameter learning: randomized half/half cross-validation scored by
//! the validation negative log-likelihood, minimized by Bayesian
//! optimization over the encoded search box.

mod bayesopt;
mod cv;
mod partition;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FitConfig, Optimizer};
use crate::kernels::{decode_params, encode_params, HyperParams, KernelFamily, ParamDim, SearchSpace};
use crate::seed;
use crate::simulate::ObservationSet;

pub use bayesopt::{bayes_opt_minimize, BayesOptConfig, BayesOptOutcome, Evaluation};
pub use cv::{
    cv_loss, draw_partitions, empirical_cv_objective, empirical_cv_objective_pinned, increment_nll,
};
pub use partition::{random_partition, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    /// Partitions averaged per objective evaluation.
    pub m_partitions: usize,
    /// Objective evaluations, initial design included.
    pub budget: usize,
    pub seed: u64,
    /// Also search λ and γ.
    pub include_noise: bool,
    /// Explicit search box; the default box around the template otherwise.
    pub search: Option<Vec<ParamDim>>,
    /// Iteration cap for the fits inside the objective, if lower than the
    /// fit config's own.
    pub inner_max_iters: Option<usize>,
    pub n_initial: usize,
    pub n_candidates: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self::for_optimizer(Optimizer::NormBoundedGD)
    }
}

impl CvConfig {
    /// `M = 1, K = 75` for gradient descent; `M = 10, K = 150` for Newton.
    pub fn for_optimizer(optimizer: Optimizer) -> Self {
        let (m_partitions, budget) = match optimizer {
            Optimizer::NormBoundedGD => (1, 75),
            Optimizer::NewtonArmijo => (10, 150),
        };
        let bo = BayesOptConfig::default();
        Self {
            m_partitions,
            budget,
            seed: 0,
            include_noise: false,
            search: None,
            inner_max_iters: None,
            n_initial: bo.n_initial,
            n_candidates: bo.n_candidates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_partitions == 0 {
            return Err(Error::InvalidInput("m_partitions must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(Error::BudgetTooSmall { budget: 0 });
        }
        Ok(())
    }

    pub fn space(&self, template: HyperParams) -> SearchSpace {
        match &self.search {
            Some(dims) => SearchSpace {
                template,
                dims: dims.clone(),
            },
            None => SearchSpace::around(template, self.include_noise),
        }
    }

    fn bayes_opt(&self) -> BayesOptConfig {
        BayesOptConfig {
            budget: self.budget,
            seed: seed::derive(self.seed, &[seed::label("bayes-opt")]),
            n_initial: self.n_initial,
            n_candidates: self.n_candidates,
            ..Default::default()
        }
    }

    fn inner_fit(&self, fit: &FitConfig) -> FitConfig {
        let mut inner = *fit;
        if let Some(cap) = self.inner_max_iters {
            inner.optimizer.gd_max_iters = inner.optimizer.gd_max_iters.min(cap);
            inner.optimizer.newton_max_iters = inner.optimizer.newton_max_iters.min(cap);
        }
        inner
    }

    /// Seed of the partitions used by evaluation `iter`.
    pub fn partition_seed(&self, iter: usize) -> u64 {
        seed::derive(self.seed, &[seed::label("partitions"), iter as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub hp: HyperParams,
    pub space: SearchSpace,
    pub search: BayesOptOutcome,
}

impl LearnOutcome {
    /// `iter,<labels>,objective` rows.
    pub fn write_history<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::InvalidInput(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend(self.space.labels());
        header.push("objective".into());
        w.write_record(&header).map_err(err)?;
        for (i, e) in self.search.history.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(e.theta.iter().map(|v| format!("{v:.16e}")));
            row.push(format!("{:.16e}", e.raw));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Learns kernel parameters of the given families. λ and γ of the template
/// come from `fit.hp`.
pub fn learn_hyperparams(
    obs: &ObservationSet,
    drift: KernelFamily,
    vol: KernelFamily,
    cv: &CvConfig,
    fit: &FitConfig,
) -> Result<LearnOutcome> {
    let defaults = HyperParams::defaults(&obs.x, drift, vol, obs.mean_dt())?;
    let template = HyperParams {
        lambda: fit.hp.lambda,
        gamma: fit.hp.gamma,
        ..defaults
    };
    learn_from(obs, template, cv, fit)
}

/// Searches the box around `template`, starting from the template itself.
pub fn learn_from(
    obs: &ObservationSet,
    template: HyperParams,
    cv: &CvConfig,
    fit: &FitConfig,
) -> Result<LearnOutcome> {
    cv.validate()?;
    if obs.len() < 8 {
        return Err(Error::TooFewPoints {
            needed: 8,
            got: obs.len(),
        });
    }
    let space = cv.space(template);
    let start = encode_params(&template, &space)?;
    let inner = cv.inner_fit(fit);
    let objective = |iter: usize, theta: &[f64]| -> f64 {
        decode_params(theta, &space)
            .and_then(|hp| {
                empirical_cv_objective(&hp, obs, cv.m_partitions, cv.partition_seed(iter), &inner)
            })
            .unwrap_or(f64::NAN)
    };
    let search = bayes_opt_minimize(objective, &space.bounds(), Some(&start), &cv.bayes_opt())?;
    let hp = decode_params(&search.best_theta, &space)?;
    Ok(LearnOutcome { hp, space, search })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::points::Points;
    use crate::simulate::{euler_maruyama, to_observations, ProcessSpec};

    fn exp_vol(n: usize, seed: u64) -> ObservationSet {
        let p = ProcessSpec::ExpDecayVol { mu: 5.0, b: 1.0 };
        to_observations(&euler_maruyama(&p, 0.0, 0.01, n, seed).unwrap()).unwrap()
    }

    fn newton_fit(obs: &ObservationSet) -> FitConfig {
        let hp = HyperParams::defaults(&obs.x, KernelFamily::Matern52, KernelFamily::Matern52, obs.mean_dt())
            .unwrap();
        FitConfig::new(hp).with_optimizer(Optimizer::NewtonArmijo)
    }

    #[test]
    fn nll_terms() {
        assert_eq!(increment_nll(&[0.0], &[1.0], &[0.0], &[0.0], 1.0).unwrap(), 0.0);
        let got = increment_nll(&[0.3], &[0.1], &[1.0], &[2.0], 0.01).unwrap();
        let v: f64 = 4.0 * 0.1 + 0.01;
        assert!((got - ((0.3f64 - 0.1).powi(2) / (2.0 * v) + 0.5 * v.ln())).abs() < 1e-15);
        let v: f64 = 0.7;
        let perfect = increment_nll(&[0.2, 0.4], &[1.0, 2.0], &[0.2, 0.2], &[0.0, 0.0], v).unwrap();
        assert!((perfect - v.ln()).abs() < 1e-15);
    }

    #[test]
    fn cv_loss_is_deterministic_for_pinned_partition() {
        let obs = exp_vol(40, 2);
        let cfg = newton_fit(&obs);
        let parts = draw_partitions(obs.len(), 3, 11).unwrap();
        let a = cv_loss(&cfg.hp, &parts[0], &obs, &cfg).unwrap();
        assert_eq!(a, cv_loss(&cfg.hp, &parts[0], &obs, &cfg).unwrap());
        assert!(a.is_finite());

        let losses: Vec<f64> = parts.iter().map(|p| cv_loss(&cfg.hp, p, &obs, &cfg).unwrap()).collect();
        let mean = empirical_cv_objective_pinned(&cfg.hp, &obs, &parts, &cfg).unwrap();
        assert!((mean - losses.iter().sum::<f64>() / 3.0).abs() < 1e-12);

        let one = empirical_cv_objective(&cfg.hp, &obs, 1, 5, &cfg).unwrap();
        let p = draw_partitions(obs.len(), 1, 5).unwrap();
        assert_eq!(one, cv_loss(&cfg.hp, &p[0], &obs, &cfg).unwrap());
    }

    #[test]
    fn averaging_reduces_variance() {
        let obs = exp_vol(40, 4);
        let cfg = newton_fit(&obs);
        let spread = |m: usize| {
            let v: Vec<f64> = (0..20)
                .map(|r| empirical_cv_objective(&cfg.hp, &obs, m, 100 + r, &cfg).unwrap())
                .collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert!(spread(10) < spread(1));
    }

    #[test]
    fn learning_improves_on_default_and_is_deterministic() {
        let obs = exp_vol(200, 7);
        let fit = newton_fit(&obs);
        let cv = CvConfig {
            budget: 20,
            seed: 3,
            ..CvConfig::for_optimizer(Optimizer::NewtonArmijo)
        };
        let cv = CvConfig { m_partitions: 2, ..cv };
        let out = learn_hyperparams(&obs, KernelFamily::Matern52, KernelFamily::Matern52, &cv, &fit).unwrap();
        let pinned = draw_partitions(obs.len(), 4, 99).unwrap();
        let learned = empirical_cv_objective_pinned(&out.hp, &obs, &pinned, &fit).unwrap();
        let default = empirical_cv_objective_pinned(&fit.hp, &obs, &pinned, &fit).unwrap();
        assert!(learned <= default, "{learned} > {default}");
        let again = learn_hyperparams(&obs, KernelFamily::Matern52, KernelFamily::Matern52, &cv, &fit).unwrap();
        assert_eq!(again.hp, out.hp);

        for e in &out.search.history {
            for (v, (lo, hi)) in e.theta.iter().zip(out.space.bounds()) {
                assert!(*v >= lo && *v <= hi);
            }
        }
        let mut buf = Vec::new();
        out.write_history(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,drift.variance,drift.lengthscale,vol.variance,vol.lengthscale,objective\n"));
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn budget_one_returns_the_template() {
        let obs = exp_vol(20, 1);
        let fit = newton_fit(&obs);
        let cv = CvConfig {
            budget: 1,
            ..Default::default()
        };
        let out = learn_hyperparams(&obs, KernelFamily::Matern52, KernelFamily::Matern52, &cv, &fit).unwrap();
        assert_eq!(out.search.history.len(), 1);
        let d = out.hp.drift_kernel;
        let KernelSpec::Matern52 { lengthscale, .. } = d else {
            panic!()
        };
        let want = crate::kernels::default_lengthscale(&obs.x).unwrap();
        assert!((lengthscale - want).abs() < 1e-12 * want);
    }

    #[test]
    fn too_few_points() {
        let obs = ObservationSet::new(Points::from_scalars(vec![0.0; 5]), vec![0.0; 5], vec![0.1; 5]).unwrap();
        let fit = newton_fit(&exp_vol(10, 0));
        assert!(matches!(
            learn_from(&obs, fit.hp, &CvConfig::default(), &fit),
            Err(Error::TooFewPoints { needed: 8, .. })
        ));
    }
}
