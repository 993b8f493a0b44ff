//! Homoscedastic GP regression baseline: increments modeled as a smooth GP
//! plus white noise, parameters fitted by the negative log marginal
//! likelihood.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperlearn::{bayes_opt_minimize, BayesOptConfig, BayesOptOutcome};
use crate::kernels::{gram, gram_diag, KernelFamily, KernelSpec, LOG_HALF_WIDTH, OFFSET_RANGE};
use crate::numerics::{factor_spd, JitterPolicy, SpdFactor};
use crate::points::Points;

/// `½ Yᵀ(K' + cI)⁻¹Y + log det(K' + cI)`.
pub fn log_marginal_nll(kernel: &KernelSpec, noise_level: f64, x: &Points, y: &[f64]) -> Result<f64> {
    let (factor, yv) = factor_with_noise(kernel, noise_level, x, y)?;
    let alpha_half = factor.half_solve(&yv)?;
    Ok(0.5 * alpha_half.norm_squared() + factor.log_det())
}

/// `½ Yᵀ(K' + cI)⁻¹Y + ½ log det(K' + cI)`, the Gaussian negative log
/// evidence without its constant.
pub fn gaussian_nll(kernel: &KernelSpec, noise_level: f64, x: &Points, y: &[f64]) -> Result<f64> {
    let (factor, yv) = factor_with_noise(kernel, noise_level, x, y)?;
    let alpha_half = factor.half_solve(&yv)?;
    Ok(0.5 * alpha_half.norm_squared() + 0.5 * factor.log_det())
}

/// Criterion minimized by [`fit_benchmark`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NllForm {
    /// [`gaussian_nll`].
    #[default]
    Gaussian,
    /// [`log_marginal_nll`]; its doubled log-determinant biases `c` down by
    /// about a factor two.
    Literal,
}

impl NllForm {
    pub fn eval(self, kernel: &KernelSpec, noise_level: f64, x: &Points, y: &[f64]) -> Result<f64> {
        match self {
            Self::Gaussian => gaussian_nll(kernel, noise_level, x, y),
            Self::Literal => log_marginal_nll(kernel, noise_level, x, y),
        }
    }
}

fn factor_with_noise(
    kernel: &KernelSpec,
    noise_level: f64,
    x: &Points,
    y: &[f64],
) -> Result<(SpdFactor, DVector<f64>)> {
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::InvalidParams(format!("noise level must be >= 0, got {noise_level}")));
    }
    kernel.validate()?;
    let mut k = gram(kernel, x, x)?;
    for i in 0..k.nrows() {
        k[(i, i)] += noise_level;
    }
    Ok((factor_spd(&k, &JitterPolicy::default())?, DVector::from_column_slice(y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub budget: usize,
    pub seed: u64,
    pub n_initial: usize,
    pub n_candidates: usize,
    pub objective: NllForm,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let bo = BayesOptConfig::default();
        Self {
            budget: bo.budget,
            seed: 0,
            n_initial: bo.n_initial,
            n_candidates: bo.n_candidates,
            objective: NllForm::default(),
        }
    }
}

/// Fitted baseline. `alpha = (K' + cI)⁻¹Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkModel {
    pub smooth_kernel: KernelSpec,
    pub noise_level: f64,
    pub x: Points,
    pub y: Vec<f64>,
    pub alpha: Vec<f64>,
    /// [`gaussian_nll`] at the fitted parameters.
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFit {
    pub model: BenchmarkModel,
    pub labels: Vec<String>,
    pub search: BayesOptOutcome,
}

/// Search coordinates: the smooth kernel's parameters, then `log10 c`.
/// Positive parameters span `±3` decades around their default; the smooth
/// variance and `c` are centred on the sample variance of `Y`.
fn search_box(family: KernelFamily, x: &Points, y: &[f64]) -> Result<(KernelSpec, Vec<(f64, f64)>, Vec<String>)> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-300);
    let mut template = KernelSpec::default_for(family, x)?;
    if template.param("variance").is_some() {
        template.set_param("variance", var)?;
    }
    let mut bounds = Vec::new();
    let mut labels = Vec::new();
    for name in template.param_names() {
        let v = template.param(name).expect("listed parameter");
        if *name == "offset" {
            bounds.push(OFFSET_RANGE);
        } else {
            let c = v.max(f64::MIN_POSITIVE).log10();
            bounds.push((c - LOG_HALF_WIDTH, c + LOG_HALF_WIDTH));
        }
        labels.push(format!("kernel.{name}"));
    }
    let c = var.log10();
    bounds.push((c - LOG_HALF_WIDTH, c + LOG_HALF_WIDTH));
    labels.push("noise_level".into());
    Ok((template, bounds, labels))
}

fn decode(template: &KernelSpec, theta: &[f64]) -> Result<(KernelSpec, f64)> {
    let mut k = *template;
    let names = template.param_names();
    for (name, v) in names.iter().zip(theta) {
        let raw = if *name == "offset" { *v } else { 10f64.powf(*v) };
        k.set_param(name, raw)?;
    }
    Ok((k, 10f64.powf(theta[names.len()])))
}

fn encode(template: &KernelSpec, c: f64) -> Vec<f64> {
    let mut v: Vec<f64> = template
        .param_names()
        .iter()
        .map(|n| {
            let p = template.param(n).expect("listed parameter");
            if *n == "offset" {
                p
            } else {
                p.log10()
            }
        })
        .collect();
    v.push(c.log10());
    v
}

/// Minimizes the configured negative log evidence over the smooth kernel's parameters and
/// `c`, starting from the defaults.
pub fn fit_benchmark(
    x: &Points,
    y: &[f64],
    family: KernelFamily,
    config: &BenchmarkConfig,
) -> Result<BenchmarkFit> {
    if y.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: y.len(),
        });
    }
    let (template, bounds, labels) = search_box(family, x, y)?;
    let start = encode(&template, 10f64.powf(bounds.last().expect("c bound").0 + LOG_HALF_WIDTH));
    let objective = |_: usize, theta: &[f64]| -> f64 {
        decode(&template, theta)
            .and_then(|(k, c)| config.objective.eval(&k, c, x, y))
            .unwrap_or(f64::NAN)
    };
    let bo = BayesOptConfig {
        budget: config.budget,
        seed: config.seed,
        n_initial: config.n_initial,
        n_candidates: config.n_candidates,
        ..Default::default()
    };
    let search = bayes_opt_minimize(objective, &bounds, Some(&start), &bo)?;
    let (kernel, c) = decode(&template, &search.best_theta)?;
    let model = build_model(kernel, c, x, y)?;
    Ok(BenchmarkFit {
        model,
        labels,
        search,
    })
}

/// Conditions the baseline on `(x, y)` at fixed parameters.
pub fn build_model(kernel: KernelSpec, noise_level: f64, x: &Points, y: &[f64]) -> Result<BenchmarkModel> {
    let (factor, yv) = factor_with_noise(&kernel, noise_level, x, y)?;
    let alpha = factor.solve_vec(&yv)?;
    let nll = 0.5 * yv.dot(&alpha) + 0.5 * factor.log_det();
    Ok(BenchmarkModel {
        smooth_kernel: kernel,
        noise_level,
        x: x.clone(),
        y: y.to_vec(),
        alpha: alpha.as_slice().to_vec(),
        nll,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPrediction {
    /// `m(x) / Δt`.
    pub drift: Vec<f64>,
    /// `√(c / Δt)`, the same at every query point.
    pub volatility: Vec<f64>,
    /// `√((K'(x,x) − k(x)ᵀ(K'+cI)⁻¹k(x) + c) / Δt)`, diagnostic only.
    pub predictive_std: Vec<f64>,
}

pub fn predict_benchmark(model: &BenchmarkModel, x: &Points, dt: f64) -> Result<BenchmarkPrediction> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let cross = gram(&model.smooth_kernel, &model.x, x)?;
    let mean = cross.tr_mul(&DVector::from_column_slice(&model.alpha));
    let (factor, _) = factor_with_noise(&model.smooth_kernel, model.noise_level, &model.x, &model.y)?;
    let w = factor.half_solve_mat(&cross)?;
    let prior = gram_diag(&model.smooth_kernel, x);
    let predictive_std = prior
        .iter()
        .zip(w.column_iter())
        .map(|(k, col)| ((k - col.norm_squared()).max(0.0) + model.noise_level).sqrt() / dt.sqrt())
        .collect();
    let vol = (model.noise_level / dt).sqrt();
    Ok(BenchmarkPrediction {
        drift: mean.iter().map(|m| m / dt).collect(),
        volatility: vec![vol; x.len()],
        predictive_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{euler_maruyama, to_observations, ProcessSpec};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn scalar_nll() {
        let k = KernelSpec::matern52(1.0, 1.0).unwrap();
        let got = log_marginal_nll(&k, 1.0, &Points::from_scalars(vec![0.0]), &[1.0]).unwrap();
        assert!((got - (0.25 + 2f64.ln())).abs() < 1e-14);
        let zero = log_marginal_nll(&k, 1.0, &Points::from_scalars(vec![0.0]), &[0.0]).unwrap();
        assert!((zero - 2f64.ln()).abs() < 1e-14);
        let g = gaussian_nll(&k, 1.0, &Points::from_scalars(vec![0.0]), &[1.0]).unwrap();
        assert!((g - (0.25 + 0.5 * 2f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn nll_matches_dense_inverse() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        for _ in 0..5 {
            let x = Points::from_scalars((0..5).map(|_| u.sample(&mut rng)).collect());
            let y: Vec<f64> = (0..5).map(|_| u.sample(&mut rng)).collect();
            let k = KernelSpec::matern52(0.8, 0.6).unwrap();
            let m = gram(&k, &x, &x).unwrap() + DMatrix::identity(5, 5) * 0.3;
            let yv = DVector::from_vec(y.clone());
            let want = 0.5 * yv.dot(&(m.clone().try_inverse().unwrap() * &yv)) + m.determinant().ln();
            let got = log_marginal_nll(&k, 0.3, &x, &y).unwrap();
            assert!((got - want).abs() < 1e-8, "{got} {want}");
        }
    }

    #[test]
    fn recovers_white_noise_level() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let v: f64 = 0.04;
        let n = 300;
        let x = Points::from_scalars((0..n).map(|i| i as f64 / n as f64).collect());
        let y: Vec<f64> = (0..n)
            .map(|_| v.sqrt() * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let cfg = BenchmarkConfig {
            budget: 30,
            ..Default::default()
        };
        let fit = fit_benchmark(&x, &y, KernelFamily::Matern52, &cfg).unwrap();
        let c = fit.model.noise_level;
        assert!(c > v / 2.0 && c < v * 2.0, "{c}");
        assert_eq!(fit_benchmark(&x, &y, KernelFamily::Matern52, &cfg).unwrap(), fit);
        assert!(fit.model.nll <= fit.search.history[0].raw);
    }

    #[test]
    fn interpolates_and_reverts() {
        let x = Points::from_scalars(vec![0.0, 0.5, 1.1]);
        let y = [0.01, -0.02, 0.03];
        let m = build_model(KernelSpec::matern52(1.0, 1.0).unwrap(), 0.0, &x, &y).unwrap();
        let p = predict_benchmark(&m, &x, 0.01).unwrap();
        for (d, yi) in p.drift.iter().zip(&y) {
            assert!((d - yi / 0.01).abs() < 1e-6);
        }
        let far = predict_benchmark(&m, &Points::from_scalars(vec![100.0]), 0.01).unwrap();
        assert!(far.drift[0].abs() < 1e-9);
        assert!(p.volatility.iter().all(|v| *v == p.volatility[0]));
    }

    #[test]
    fn ou_volatility_is_recovered() {
        let p = ProcessSpec::Ou { theta: 5.0, sigma: 1.0 };
        let obs = to_observations(&euler_maruyama(&p, 0.0, 0.001, 500, 21).unwrap()).unwrap();
        let cfg = BenchmarkConfig {
            budget: 30,
            seed: 1,
            ..Default::default()
        };
        let fit = fit_benchmark(&obs.x, &obs.y, KernelFamily::Matern52, &cfg).unwrap();
        let pred = predict_benchmark(&fit.model, &obs.x.slice(0, 3), 0.001).unwrap();
        assert!((pred.volatility[0] - 1.0).abs() < 0.15, "{}", pred.volatility[0]);
        let json = serde_json::to_value(&fit.model).unwrap();
        assert_eq!(json["smooth_kernel"]["family"], "Matern52");
    }
}
