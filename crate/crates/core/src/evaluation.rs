//! Metrics and experiment orchestration: one simulated path, a chronological
//! train/test split, three methods scored on the test increments.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{fit_benchmark, predict_benchmark, BenchmarkConfig};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig, InitMode, OptimizerSettings};
use crate::hyperlearn::{increment_nll, learn_hyperparams, CvConfig};
use crate::kernels::{HyperParams, KernelFamily, DEFAULT_GAMMA, DEFAULT_LAMBDA_FACTOR};
use crate::seed;
use crate::simulate::{euler_maruyama, subsample, to_observations, ObservationSet, ProcessSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Benchmark,
    NonLearnedKernel,
    LearnedKernel,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Benchmark, Method::NonLearnedKernel, Method::LearnedKernel];

    pub fn name(self) -> &'static str {
        match self {
            Self::Benchmark => "Benchmark",
            Self::NonLearnedKernel => "NonLearnedKernel",
            Self::LearnedKernel => "LearnedKernel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    /// Per-point mean negative log-likelihood of the test increments.
    pub likelihood: f64,
    pub delta_f: f64,
    pub delta_sigma: f64,
    pub runtime_seconds: f64,
    pub seed: u64,
    pub k: usize,
    pub lambda: f64,
    /// Drift error is reported but not meaningful (GBM at fine time steps).
    pub drift_flagged: bool,
}

fn default_one() -> usize {
    1
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_true() -> bool {
    true
}

fn default_family() -> KernelFamily {
    KernelFamily::Matern52
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub process: ProcessSpec,
    #[serde(default)]
    pub x0: f64,
    /// Simulation step; observations are `subsample_k · dt` apart.
    pub dt: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_one")]
    pub subsample_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_family")]
    pub drift_kernel: KernelFamily,
    #[serde(default = "default_family")]
    pub vol_kernel: KernelFamily,
    /// λ at `k = 1`; `0.01·dt` if absent. Scaled by `k` when subsampling.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub fit: OptimizerSettings,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    /// Record wall-clock runtimes; off makes reports byte-reproducible.
    #[serde(default = "default_true")]
    pub timing: bool,
}

impl ExperimentSpec {
    /// Defaults around a process: `n_train = n_test = 500`, Matérn kernels.
    pub fn new(process: ProcessSpec, x0: f64, dt: f64) -> Self {
        Self {
            process,
            x0,
            dt,
            n_train: 500,
            n_test: 500,
            subsample_k: 1,
            seed: 0,
            drift_kernel: KernelFamily::Matern52,
            vol_kernel: KernelFamily::Matern52,
            lambda: None,
            gamma: DEFAULT_GAMMA,
            fit: OptimizerSettings::default(),
            init_mode: InitMode::default(),
            cv: CvConfig::default(),
            benchmark: BenchmarkConfig::default(),
            timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.n_test < 2 {
            return Err(Error::InvalidInput("n_train and n_test must be at least 2".into()));
        }
        if self.subsample_k == 0 {
            return Err(Error::InvalidInput("subsample_k must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParams(format!("lambda must be > 0, got {l}")));
            }
        }
        self.fit.validate()?;
        self.cv.validate()
    }

    pub fn base_lambda(&self) -> f64 {
        self.lambda.unwrap_or(DEFAULT_LAMBDA_FACTOR * self.dt)
    }

    /// `λ_k = k·λ`.
    pub fn lambda_for(&self, k: usize) -> f64 {
        k as f64 * self.base_lambda()
    }

    fn stream(&self, name: &str) -> u64 {
        seed::derive(self.seed, &[seed::label(self.process.name()), seed::label(name)])
    }

    pub fn trajectory_seed(&self) -> u64 {
        self.stream("trajectory")
    }

    /// Path long enough for `n_train + n_test` increments after subsampling by `k`.
    pub fn simulate(&self, k: usize) -> Result<Trajectory> {
        euler_maruyama(
            &self.process,
            self.x0,
            self.dt,
            k * (self.n_train + self.n_test),
            self.trajectory_seed(),
        )
    }

    /// The four catalog processes at their reference parameters.
    pub fn standard_suite(n_train: usize, n_test: usize, seed: u64) -> Vec<ExperimentSpec> {
        [
            (ProcessSpec::ExpDecayVol { mu: 5.0, b: 1.0 }, 0.0, 0.01),
            (ProcessSpec::Trigonometric { k_freq: 1.0, b: 0.5 }, 0.0, 0.001),
            (ProcessSpec::Gbm { mu: 2.0, sigma: 1.0 }, 1.0, 0.001),
            (ProcessSpec::Ou { theta: 5.0, sigma: 1.0 }, 1.0, 0.001),
        ]
        .into_iter()
        .map(|(p, x0, dt)| ExperimentSpec {
            n_train,
            n_test,
            seed,
            ..ExperimentSpec::new(p, x0, dt)
        })
        .collect()
    }
}

/// Per-point mean of the test-increment negative log-likelihood.
pub fn likelihood_metric(f_pred: &[f64], sigma_pred: &[f64], test: &ObservationSet, lambda: f64) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test observations"));
    }
    Ok(increment_nll(&test.y, &test.dt, f_pred, sigma_pred, lambda)? / test.len() as f64)
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖f − f̂‖/‖f‖` and `‖|σ| − |σ̂|‖/‖σ‖`.
pub fn relative_errors(f_true: &[f64], sigma_true: &[f64], f_pred: &[f64], sigma_pred: &[f64]) -> Result<(f64, f64)> {
    let n = f_true.len();
    for len in [sigma_true.len(), f_pred.len(), sigma_pred.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let nf = norm(f_true.iter().copied());
    let ns = norm(sigma_true.iter().copied());
    if nf == 0.0 || ns == 0.0 {
        return Err(Error::ZeroTruthNorm);
    }
    let df = norm(f_true.iter().zip(f_pred).map(|(a, b)| a - b)) / nf;
    let ds = norm(sigma_true.iter().zip(sigma_pred).map(|(a, b)| a.abs() - b.abs())) / ns;
    Ok((df, ds))
}

/// Predictions of one method at the test inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub method: Method,
    pub x: Vec<f64>,
    pub f_true: Vec<f64>,
    pub f_pred: Vec<f64>,
    pub sigma_true: Vec<f64>,
    pub sigma_pred: Vec<f64>,
    /// Benchmark only: full predictive standard deviation per unit time.
    pub sigma_pred_full: Option<Vec<f64>>,
}

impl PredictionTable {
    /// `x,f_true,f_pred,sigma_true,sigma_pred[,sigma_pred_full]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::InvalidInput(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x", "f_true", "f_pred", "sigma_true", "sigma_pred"];
        if self.sigma_pred_full.is_some() {
            header.push("sigma_pred_full");
        }
        w.write_record(&header).map_err(err)?;
        for i in 0..self.x.len() {
            let mut row = vec![self.x[i], self.f_true[i], self.f_pred[i], self.sigma_true[i], self.sigma_pred[i]];
            if let Some(full) = &self.sigma_pred_full {
                row.push(full[i]);
            }
            w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(err)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentSpec,
    pub k: usize,
    pub lambda: f64,
    pub rows: Vec<MetricRow>,
    pub non_learned_hp: HyperParams,
    pub learned_hp: HyperParams,
    /// Benchmark noise level `c`.
    pub benchmark_noise_level: f64,
    #[serde(skip)]
    pub predictions: Vec<PredictionTable>,
}

impl ExperimentReport {
    pub fn row(&self, method: Method) -> &MetricRow {
        self.rows.iter().find(|r| r.method == method).expect("all methods are run")
    }
}

fn timed<T>(on: bool, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, if on { start.elapsed().as_secs_f64() } else { 0.0 }))
}

/// Simulates the spec's path (subsampled by `subsample_k`) and scores all methods.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let k = spec.subsample_k;
    let traj = subsample(&spec.simulate(k)?, k)?;
    run_on_trajectory(spec, &traj, k)
}

/// Scores all methods on `traj`, whose first `n_train` increments train and
/// the next `n_test` test.
pub fn run_on_trajectory(spec: &ExperimentSpec, traj: &Trajectory, k: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    let obs = to_observations(traj)?;
    let n = spec.n_train + spec.n_test;
    if obs.len() < n {
        return Err(Error::TooShort(traj.len()));
    }
    let train = obs.slice(0, spec.n_train);
    let test = obs.slice(spec.n_train, n);
    let lambda = spec.lambda_for(k);
    let p = spec.process;
    let xs = test.x.column(0);
    let f_true: Vec<f64> = xs.iter().map(|x| p.drift_of(*x)).collect();
    let sigma_true: Vec<f64> = xs.iter().map(|x| p.vol_of(*x)).collect();
    let drift_flagged = matches!(p, ProcessSpec::Gbm { .. });

    let defaults = HyperParams::defaults(&train.x, spec.drift_kernel, spec.vol_kernel, train.mean_dt())?;
    let non_learned_hp = HyperParams {
        lambda,
        gamma: spec.gamma,
        ..defaults
    };
    let fit_config = FitConfig {
        hp: non_learned_hp,
        optimizer: spec.fit,
        init_mode: spec.init_mode,
        input_coordinate: None,
    };

    let kernel_method = |hp: HyperParams| -> Result<(Vec<f64>, Vec<f64>)> {
        let r = fit(&train, &FitConfig { hp, ..fit_config })?;
        Ok((r.predict_drift(&test.x)?.mean, r.predict_sigma(&test.x)?))
    };

    let ((nl_f, nl_s), nl_time) = timed(spec.timing, || kernel_method(non_learned_hp))?;

    let cv = CvConfig {
        seed: seed::derive(spec.stream(Method::LearnedKernel.name()), &[spec.cv.seed, k as u64]),
        ..spec.cv.clone()
    };
    let ((learned_hp, l_f, l_s), l_time) = timed(spec.timing, || {
        let out = learn_hyperparams(&train, spec.drift_kernel, spec.vol_kernel, &cv, &fit_config)?;
        let (f, s) = kernel_method(out.hp)?;
        Ok((out.hp, f, s))
    })?;

    let bench_cfg = BenchmarkConfig {
        seed: seed::derive(spec.stream(Method::Benchmark.name()), &[spec.benchmark.seed, k as u64]),
        ..spec.benchmark.clone()
    };
    let (bench, b_time) = timed(spec.timing, || {
        let fitted = fit_benchmark(&train.x, &train.y, spec.drift_kernel, &bench_cfg)?;
        let pred = predict_benchmark(&fitted.model, &test.x, train.mean_dt())?;
        Ok((fitted.model.noise_level, pred))
    })?;
    let (benchmark_noise_level, bench_pred) = bench;

    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    for (method, f_pred, s_pred, runtime, full) in [
        (Method::Benchmark, bench_pred.drift, bench_pred.volatility, b_time, Some(bench_pred.predictive_std)),
        (Method::NonLearnedKernel, nl_f, nl_s, nl_time, None),
        (Method::LearnedKernel, l_f, l_s, l_time, None),
    ] {
        let likelihood = likelihood_metric(&f_pred, &s_pred, &test, lambda)?;
        let (delta_f, delta_sigma) = relative_errors(&f_true, &sigma_true, &f_pred, &s_pred)?;
        rows.push(MetricRow {
            method,
            likelihood,
            delta_f,
            delta_sigma,
            runtime_seconds: runtime,
            seed: spec.seed,
            k,
            lambda,
            drift_flagged,
        });
        predictions.push(PredictionTable {
            method,
            x: xs.clone(),
            f_true: f_true.clone(),
            f_pred,
            sigma_true: sigma_true.clone(),
            sigma_pred: s_pred,
            sigma_pred_full: full,
        });
    }
    Ok(ExperimentReport {
        experiment: spec.clone(),
        k,
        lambda,
        rows,
        non_learned_hp,
        learned_hp,
        benchmark_noise_level,
        predictions,
    })
}

/// One experiment per `k` on subsamples of a single base path, `λ_k = k·λ`.
pub fn time_discretization_sweep(spec: &ExperimentSpec, ks: &[usize]) -> Result<Vec<ExperimentReport>> {
    spec.validate()?;
    if ks.is_empty() {
        return Err(Error::EmptyInput("k list"));
    }
    if ks.contains(&0) {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let max_k = *ks.iter().max().expect("nonempty");
    let base = spec.simulate(max_k)?;
    let n_points = spec.n_train + spec.n_test + 1;
    ks.par_iter()
        .map(|&k| {
            let sub = subsample(&base, k)?;
            let traj = Trajectory::new(
                sub.times[..n_points].to_vec(),
                sub.values.slice(0, n_points),
                sub.seed,
            )?;
            let cell = ExperimentSpec {
                subsample_k: k,
                ..spec.clone()
            };
            run_on_trajectory(&cell, &traj, k)
        })
        .collect()
}

/// `process,k,lambda,method,likelihood,delta_f,delta_sigma,runtime_seconds,seed`.
pub fn write_table<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "process",
        "k",
        "lambda",
        "method",
        "likelihood",
        "delta_f",
        "delta_sigma",
        "runtime_seconds",
        "seed",
    ])
    .map_err(err)?;
    for rep in reports {
        for r in &rep.rows {
            w.write_record([
                rep.experiment.process.name().to_string(),
                r.k.to_string(),
                format!("{:e}", r.lambda),
                r.method.name().to_string(),
                format!("{:.6}", r.likelihood),
                format!("{:.6}", r.delta_f),
                format!("{:.6}", r.delta_sigma),
                format!("{:.3}", r.runtime_seconds),
                r.seed.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}
