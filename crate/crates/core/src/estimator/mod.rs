//! MAP recovery of drift and volatility at the training inputs, and the
//! posterior predictors built from the result.

mod loss;
mod optimize;

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::HyperParams;
use crate::points::Points;
use crate::simulate::{MultiObservationSet, ObservationSet};

pub use loss::{
    coupled_drift, coupled_sigma_loss, drift_given_sigma, drift_posterior, init_sigma, map_loss,
    sigma_posterior, sigma_profile_grad, sigma_profile_loss, smooth_sigma, DriftPosterior,
    InitMode, ProfileObjective,
};
pub use optimize::{minimize, Minimization, Optimizer, OptimizerSettings, SigmaObjective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub hp: HyperParams,
    #[serde(flatten)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub init_mode: InitMode,
    /// Kernels see only this coordinate of the state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_coordinate: Option<usize>,
}

impl FitConfig {
    /// Default optimizer settings around the given hyperparameters.
    pub fn new(hp: HyperParams) -> Self {
        Self {
            hp,
            optimizer: OptimizerSettings::default(),
            init_mode: InitMode::default(),
            input_coordinate: None,
        }
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.optimizer.optimizer = optimizer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.optimizer.validate()
    }

    /// Restricts `x` to `input_coordinate`, if set.
    fn kernel_inputs(&self, x: &Points) -> Result<Points> {
        match self.input_coordinate {
            None => Ok(x.clone()),
            Some(j) if j < x.dim() => Ok(Points::from_scalars(x.column(j))),
            Some(j) => Err(Error::DimensionMismatch {
                expected: j + 1,
                got: x.dim(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Raw minimizer of the profile loss.
    pub sigma_dagger: Vec<f64>,
    /// Smoothed volatility at the training inputs.
    pub sigma_bar: Vec<f64>,
    /// Drift at the training inputs given `sigma_bar`.
    pub f_bar: Vec<f64>,
    pub final_loss: f64,
    pub iterations: usize,
    pub config: FitConfig,
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
    pub training: ObservationSet,
}

impl FitResult {
    /// Query points as the kernels see them; full states are projected
    /// when the fit used one coordinate.
    fn query(&self, x: &Points) -> Result<Points> {
        if x.dim() == self.training.x.dim() {
            Ok(x.clone())
        } else {
            self.config.kernel_inputs(x)
        }
    }

    /// Drift posterior at `x` with the noise built from `sigma_bar`.
    pub fn predict_drift(&self, x: &Points) -> Result<DriftPosterior> {
        drift_posterior(&self.query(x)?, &self.sigma_bar, &self.training, &self.config.hp)
    }

    pub fn predict_sigma(&self, x: &Points) -> Result<Vec<f64>> {
        sigma_posterior(&self.query(x)?, &self.sigma_dagger, &self.training, &self.config.hp)
    }

    /// `iter,loss` rows.
    pub fn write_loss_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidInput(e.to_string());
        w.write_record(["iter", "loss"]).map_err(io)?;
        for (i, l) in self.loss_trace.iter().enumerate() {
            w.write_record([i.to_string(), format!("{l:.16e}")]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Initialize, minimize the profile loss, smooth, then solve for the drift.
pub fn fit(obs: &ObservationSet, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if obs.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: obs.len(),
        });
    }
    let projected;
    let obs = match config.input_coordinate {
        None => obs,
        Some(_) => {
            projected = ObservationSet::new(config.kernel_inputs(&obs.x)?, obs.y.clone(), obs.dt.clone())?;
            &projected
        }
    };
    let hp = &config.hp;
    let init = init_sigma(obs, hp, config.init_mode)?;
    let objective = ProfileObjective::new(obs, hp)?;
    let m = minimize(&objective, DVector::from_vec(init), &config.optimizer)?;
    let sigma_dagger = m.sigma.as_slice().to_vec();
    let sigma_bar = smooth_sigma(&sigma_dagger, obs, hp)?;
    let f_bar = drift_given_sigma(&sigma_bar, obs, hp)?;
    Ok(FitResult {
        sigma_dagger,
        sigma_bar,
        f_bar,
        final_loss: *m.loss_trace.last().expect("trace starts with the initial loss"),
        iterations: m.iterations,
        config: *config,
        loss_trace: m.loss_trace,
        training: obs.clone(),
    })
}

/// One independent fit per output dimension (diagonal volatility).
pub fn fit_multivariate(obs: &MultiObservationSet, configs: &[FitConfig]) -> Result<Vec<FitResult>> {
    if configs.len() != obs.dims() {
        return Err(Error::DimensionMismatch {
            expected: obs.dims(),
            got: configs.len(),
        });
    }
    (0..obs.dims())
        .into_par_iter()
        .map(|i| fit(&obs.component(i), &configs[i]))
        .collect()
}
