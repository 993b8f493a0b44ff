use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::partition::{random_partition, Partition};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig};
use crate::kernels::HyperParams;
use crate::simulate::ObservationSet;

/// `Σ (Y_i − f_iΔt_i)² / (2v_i) + ½ ln v_i` with `v_i = σ_i²Δt_i + λ`.
pub fn increment_nll(y: &[f64], dt: &[f64], f: &[f64], sigma: &[f64], lambda: f64) -> Result<f64> {
    let n = y.len();
    for len in [dt.len(), f.len(), sigma.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    Ok((0..n)
        .map(|i| {
            let v = sigma[i] * sigma[i] * dt[i] + lambda;
            let r = y[i] - f[i] * dt[i];
            r * r / (2.0 * v) + 0.5 * v.ln()
        })
        .sum())
}

/// Fit on the training half with `hp`, score the validation half.
pub fn cv_loss(
    hp: &HyperParams,
    partition: &Partition,
    obs: &ObservationSet,
    fit_config: &FitConfig,
) -> Result<f64> {
    if !partition.is_valid_for(obs.len()) {
        return Err(Error::InvalidInput(format!(
            "partition does not split {} observations",
            obs.len()
        )));
    }
    let train = obs.select(&partition.train_idx);
    let valid = obs.select(&partition.valid_idx);
    let config = FitConfig { hp: *hp, ..*fit_config };
    let result = fit(&train, &config)?;
    let f = result.predict_drift(&valid.x)?.mean;
    let sigma = result.predict_sigma(&valid.x)?;
    increment_nll(&valid.y, &valid.dt, &f, &sigma, hp.lambda)
}

/// Mean of [`cv_loss`] over the given partitions.
pub fn empirical_cv_objective_pinned(
    hp: &HyperParams,
    obs: &ObservationSet,
    partitions: &[Partition],
    fit_config: &FitConfig,
) -> Result<f64> {
    if partitions.is_empty() {
        return Err(Error::EmptyInput("partitions"));
    }
    let losses: Vec<f64> = partitions
        .par_iter()
        .map(|p| cv_loss(hp, p, obs, fit_config))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// `m` partitions drawn from a generator seeded with `seed`.
pub fn draw_partitions(n: usize, m: usize, seed: u64) -> Result<Vec<Partition>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..m).map(|_| random_partition(n, &mut rng)).collect()
}

/// Mean of [`cv_loss`] over `m` fresh partitions drawn from `seed`.
pub fn empirical_cv_objective(
    hp: &HyperParams,
    obs: &ObservationSet,
    m: usize,
    seed: u64,
    fit_config: &FitConfig,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidInput("m_partitions must be at least 1".into()));
    }
    let partitions = draw_partitions(obs.len(), m, seed)?;
    empirical_cv_objective_pinned(hp, obs, &partitions, fit_config)
}
