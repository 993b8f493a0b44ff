//! Command-line front end.
//!
//! Every artifact echoes the effective configuration: JSON files carry it
//! under `"config"`, CSV files on a leading `# {...}` comment line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::benchmark::{fit_benchmark, predict_benchmark, BenchmarkConfig};
use crate::error::Error;
use crate::estimator::{fit, FitConfig, FitResult, InitMode, Optimizer, OptimizerSettings};
use crate::evaluation::{run_experiment, time_discretization_sweep, write_table, ExperimentReport, ExperimentSpec};
use crate::hyperlearn::{learn_hyperparams, CvConfig};
use crate::kernels::{HyperParams, KernelFamily};
use crate::points::Points;
use crate::simulate::{to_multi_observations, ObservationSet, SimulationConfig, Trajectory};

pub const THREADS_ENV: &str = "SDE_RECOVER_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 config/input, 3 simulation, 4 optimization.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Core(e) => match e {
                Error::NonFiniteState { .. } => 3,
                Error::NonFiniteLoss { .. }
                | Error::FactorizationFailed { .. }
                | Error::NonFiniteMatrix
                | Error::NotSymmetric { .. } => 4,
                _ => 2,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "sde-recover", version, about = "Recover SDE drift and volatility from one sampled path")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML or JSON config file (`.json` selects JSON).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Gd,
    Newton,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Gd => Optimizer::NormBoundedGD,
            OptimizerArg::Newton => Optimizer::NewtonArmijo,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Trajectory CSV (`t,x` or `t,x1,...,xd`).
    pub trajectory: PathBuf,
    /// Coordinate of a multivariate path to use.
    #[arg(long, default_value_t = 0)]
    pub dimension: usize,
    /// Predict on this many evenly spaced points instead of the training inputs.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one Euler–Maruyama path.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_steps: Option<usize>,
    },
    /// Fit drift and volatility with fixed hyperparameters.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Hyperparameters JSON, e.g. the output of `learn`.
        #[arg(long)]
        hp: Option<PathBuf>,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
    },
    /// Learn kernel hyperparameters by randomized cross-validation.
    Learn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Fit the Gaussian-process regression baseline.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Score all methods on simulated experiments.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        /// The four catalog processes at their reference parameters.
        #[arg(long)]
        standard_suite: bool,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Repeat an experiment on subsamples of one path, `λ_k = k·λ`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        /// `a..b` (inclusive) or a comma list.
        #[arg(long, default_value = "1..10")]
        k: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Also write per-method prediction CSVs.
    #[arg(long)]
    pub plot_data: bool,
    /// Record zero runtimes so reports are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub budget: Option<usize>,
}

/// `fit` config file. Absent kernels are built from the data defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitFile {
    pub drift_family: KernelFamily,
    pub vol_family: KernelFamily,
    pub hp: Option<HyperParams>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(flatten)]
    pub optimizer: OptimizerSettings,
    pub init_mode: InitMode,
}

impl Default for FitFile {
    fn default() -> Self {
        Self {
            drift_family: KernelFamily::Matern52,
            vol_family: KernelFamily::Matern52,
            hp: None,
            lambda: None,
            gamma: None,
            optimizer: OptimizerSettings::default(),
            init_mode: InitMode::default(),
        }
    }
}

impl FitFile {
    fn config_for(&self, obs: &ObservationSet) -> CliResult<FitConfig> {
        let mut hp = match self.hp {
            Some(hp) => hp,
            None => HyperParams::defaults(&obs.x, self.drift_family, self.vol_family, obs.mean_dt())?,
        };
        if let Some(l) = self.lambda {
            hp.lambda = l;
        }
        if let Some(g) = self.gamma {
            hp.gamma = g;
        }
        Ok(FitConfig {
            hp,
            optimizer: self.optimizer,
            init_mode: self.init_mode,
            input_coordinate: None,
        })
    }
}

/// `learn` config file. `cv` defaults to the optimizer's pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LearnFile {
    #[serde(flatten)]
    pub fit: FitFile,
    pub cv: Option<CvConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkFile {
    pub kernel: KernelFamily,
    #[serde(flatten)]
    pub benchmark: BenchmarkConfig,
}

impl Default for BenchmarkFile {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::Matern52,
            benchmark: BenchmarkConfig::default(),
        }
    }
}

fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }
}

fn load_or_default<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> CliResult<T> {
    path.as_deref().map_or_else(|| Ok(T::default()), load)
}

fn require<T: DeserializeOwned>(path: &Option<PathBuf>, what: &str) -> CliResult<T> {
    match path {
        Some(p) => load(p),
        None => Err(config_err(format!("--config is required for {what}"))),
    }
}

/// Reads `{"hp": {...}}` or a bare hyperparameter object.
fn load_hp(path: &Path) -> CliResult<HyperParams> {
    let v: Value = load(path)?;
    let inner = v.get("hp").cloned().unwrap_or(v);
    serde_json::from_value(inner).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

struct Out {
    dir: PathBuf,
}

impl Out {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    fn json(&self, name: &str, value: &Value) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(config_err)?;
        writeln!(w).and_then(|_| w.flush()).map_err(config_err)
    }

    /// CSV preceded by the config comment line.
    fn csv(&self, name: &str, config: &Value, body: impl FnOnce(&mut dyn Write) -> crate::Result<()>) -> CliResult<()> {
        let mut w = self.create(name)?;
        writeln!(w, "# {config}").map_err(config_err)?;
        body(&mut w)?;
        w.flush().map_err(config_err)
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(config_err)
}

fn set_threads() -> CliResult<()> {
    if let Ok(s) = std::env::var(THREADS_ENV) {
        let n: usize = s
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| config_err(format!("{THREADS_ENV} must be a positive integer, got {s:?}")))?;
        // A pool set by an earlier call in the same process stays in place.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_k_list(s: &str) -> CliResult<Vec<usize>> {
    let bad = || config_err(format!("bad k list {s:?}"));
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(bad());
    }
    Ok(ks)
}

fn read_observations(data: &DataArgs) -> CliResult<(Trajectory, ObservationSet)> {
    let file = File::open(&data.trajectory).map_err(|e| config_err(format!("{}: {e}", data.trajectory.display())))?;
    let traj = Trajectory::read_csv(file)?;
    let multi = to_multi_observations(&traj)?;
    if data.dimension >= multi.dims() {
        return Err(config_err(format!(
            "dimension {} out of range for a {}-dimensional path",
            data.dimension,
            multi.dims()
        )));
    }
    Ok((traj, multi.component(data.dimension)))
}

fn query_points(obs: &ObservationSet, grid: Option<usize>) -> CliResult<Points> {
    match grid {
        None => Ok(obs.x.clone()),
        Some(n) if n >= 2 && obs.x.dim() == 1 => {
            let xs = obs.x.column(0);
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(Points::from_scalars((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()))
        }
        Some(_) => Err(config_err("--grid needs at least 2 points and a scalar state")),
    }
}

fn write_columns(out: &mut dyn Write, header: &[&str], x: &Points, cols: &[&[f64]]) -> crate::Result<()> {
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = if x.dim() == 1 {
        vec!["x".into()]
    } else {
        (1..=x.dim()).map(|j| format!("x{j}")).collect()
    };
    head.extend(header.iter().map(|s| s.to_string()));
    w.write_record(&head).map_err(err)?;
    for (i, row) in x.iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        rec.extend(cols.iter().map(|c| format!("{:.16e}", c[i])));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Runs a parsed command, printing a short summary to stdout.
pub fn execute(cli: Cli) -> CliResult<()> {
    set_threads()?;
    match cli.command {
        Command::Simulate { common, n_steps } => simulate(&common, n_steps),
        Command::Fit {
            common,
            data,
            hp,
            optimizer,
        } => cmd_fit(&common, &data, hp.as_deref(), optimizer),
        Command::Learn {
            common,
            data,
            optimizer,
            budget,
        } => learn(&common, &data, optimizer, budget),
        Command::Benchmark { common, data, budget } => benchmark(&common, &data, budget),
        Command::Evaluate {
            common,
            run,
            standard_suite,
            n_train,
            n_test,
        } => evaluate(&common, &run, standard_suite, n_train, n_test),
        Command::Sweep { common, run, k } => sweep(&common, &run, &k),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn simulate(common: &Common, n_steps: Option<usize>) -> CliResult<()> {
    let mut cfg: SimulationConfig = require(&common.config, "simulate")?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = n_steps {
        cfg.n_steps = n;
    }
    let traj = cfg.run()?;
    let out = Out::new(&common.out)?;
    let config = to_value(&cfg)?;
    out.csv("trajectory.csv", &config, |w| traj.write_csv(w))?;
    let xs = traj.values.as_flat();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("simulated {} points of {}, range [{lo:.6}, {hi:.6}], seed {}", traj.len(), cfg.process.name(), cfg.seed);
    Ok(())
}

fn cmd_fit(common: &Common, data: &DataArgs, hp_path: Option<&Path>, optimizer: Option<OptimizerArg>) -> CliResult<()> {
    let mut file: FitFile = load_or_default(&common.config)?;
    if let Some(p) = hp_path {
        file.hp = Some(load_hp(p)?);
    }
    if let Some(o) = optimizer {
        file.optimizer.optimizer = o.into();
    }
    let (_, obs) = read_observations(data)?;
    let cfg = file.config_for(&obs)?;
    let result: FitResult = fit(&obs, &cfg)?;
    let q = query_points(&obs, data.grid)?;
    let f = result.predict_drift(&q)?.mean;
    let s = result.predict_sigma(&q)?;

    let config = json!({
        "command": "fit",
        "trajectory": data.trajectory,
        "dimension": data.dimension,
        "grid": data.grid,
        "seed": common.seed,
        "fit": cfg,
    });
    let out = Out::new(&common.out)?;
    out.json("fit.json", &json!({ "config": config, "result": result }))?;
    out.csv("predictions.csv", &config, |w| write_columns(w, &["f_pred", "sigma_pred"], &q, &[&f, &s]))?;
    out.csv("loss_trace.csv", &config, |w| result.write_loss_trace(w))?;
    println!(
        "fit {} points: final loss {:.6}, {} iterations",
        obs.len(),
        result.final_loss,
        result.iterations
    );
    Ok(())
}

fn learn(common: &Common, data: &DataArgs, optimizer: Option<OptimizerArg>, budget: Option<usize>) -> CliResult<()> {
    let mut file: LearnFile = load_or_default(&common.config)?;
    if let Some(o) = optimizer {
        file.fit.optimizer.optimizer = o.into();
    }
    let mut cv = file
        .cv
        .clone()
        .unwrap_or_else(|| CvConfig::for_optimizer(file.fit.optimizer.optimizer));
    if let Some(s) = common.seed {
        cv.seed = s;
    }
    if let Some(b) = budget {
        cv.budget = b;
    }
    let (_, obs) = read_observations(data)?;
    let fit_cfg = file.fit.config_for(&obs)?;
    let outcome = learn_hyperparams(&obs, fit_cfg.hp.drift_kernel.family(), fit_cfg.hp.vol_kernel.family(), &cv, &fit_cfg)?;

    let config = json!({
        "command": "learn",
        "trajectory": data.trajectory,
        "dimension": data.dimension,
        "seed": cv.seed,
        "fit": fit_cfg,
        "cv": cv,
    });
    let out = Out::new(&common.out)?;
    out.json(
        "learned.json",
        &json!({
            "config": config,
            "hp": outcome.hp,
            "best_objective": outcome.search.best_value,
            "evaluations": outcome.search.history.len(),
            "space": outcome.space,
        }),
    )?;
    out.csv("history.csv", &config, |w| outcome.write_history(w))?;
    println!(
        "learned after {} evaluations: best objective {:.6}",
        outcome.search.history.len(),
        outcome.search.best_value
    );
    Ok(())
}

fn benchmark(common: &Common, data: &DataArgs, budget: Option<usize>) -> CliResult<()> {
    let mut file: BenchmarkFile = load_or_default(&common.config)?;
    if let Some(s) = common.seed {
        file.benchmark.seed = s;
    }
    if let Some(b) = budget {
        file.benchmark.budget = b;
    }
    let (_, obs) = read_observations(data)?;
    let fitted = fit_benchmark(&obs.x, &obs.y, file.kernel, &file.benchmark)?;
    let q = query_points(&obs, data.grid)?;
    let pred = predict_benchmark(&fitted.model, &q, obs.mean_dt())?;

    let config = json!({
        "command": "benchmark",
        "trajectory": data.trajectory,
        "dimension": data.dimension,
        "grid": data.grid,
        "seed": file.benchmark.seed,
        "benchmark": file,
    });
    let out = Out::new(&common.out)?;
    out.json(
        "benchmark.json",
        &json!({
            "config": config,
            "smooth_kernel": fitted.model.smooth_kernel,
            "noise_level": fitted.model.noise_level,
            "nll": fitted.model.nll,
            "evaluations": fitted.search.history.len(),
        }),
    )?;
    out.csv("benchmark_predictions.csv", &config, |w| {
        write_columns(
            w,
            &["f_pred", "sigma_pred", "sigma_pred_full"],
            &q,
            &[&pred.drift, &pred.volatility, &pred.predictive_std],
        )
    })?;
    println!(
        "benchmark: noise level {:.6e}, volatility {:.6}",
        fitted.model.noise_level,
        pred.volatility.first().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn apply_run_args(spec: &mut ExperimentSpec, common: &Common, run: &RunArgs) {
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if run.no_timing {
        spec.timing = false;
    }
    if let Some(o) = run.optimizer {
        spec.fit.optimizer = o.into();
    }
    if let Some(b) = run.budget {
        spec.cv.budget = b;
        spec.benchmark.budget = b;
    }
}

fn write_reports(out: &Out, config: &Value, reports: &[ExperimentReport], plot_data: bool, name: &str) -> CliResult<()> {
    out.json(&format!("{name}.json"), &json!({ "config": config, "reports": reports }))?;
    out.csv("table.csv", config, |w| write_table(reports, w))?;
    if plot_data {
        for rep in reports {
            for table in &rep.predictions {
                let file = format!(
                    "predictions_{}_k{}_{}.csv",
                    rep.experiment.process.name(),
                    rep.k,
                    table.method.name()
                );
                out.csv(&file, config, |w| table.write_csv(w))?;
            }
        }
    }
    for rep in reports {
        for r in &rep.rows {
            println!(
                "{:<14} k={:<2} {:<17} likelihood {:>10.4}  delta_f {:>8.4}  delta_sigma {:>8.4}",
                rep.experiment.process.name(),
                r.k,
                r.method.name(),
                r.likelihood,
                r.delta_f,
                r.delta_sigma
            );
        }
    }
    Ok(())
}

fn evaluate(
    common: &Common,
    run: &RunArgs,
    standard_suite: bool,
    n_train: Option<usize>,
    n_test: Option<usize>,
) -> CliResult<()> {
    let mut specs = if standard_suite {
        if common.config.is_some() {
            return Err(config_err("--standard-suite and --config are exclusive"));
        }
        let optimizer: Optimizer = run.optimizer.map_or(Optimizer::default(), Into::into);
        ExperimentSpec::standard_suite(n_train.unwrap_or(200), n_test.unwrap_or(200), 0)
            .into_iter()
            .map(|s| ExperimentSpec {
                fit: OptimizerSettings {
                    optimizer,
                    ..s.fit
                },
                cv: CvConfig::for_optimizer(optimizer),
                ..s
            })
            .collect()
    } else {
        vec![require::<ExperimentSpec>(&common.config, "evaluate without --standard-suite")?]
    };
    for spec in &mut specs {
        apply_run_args(spec, common, run);
        if let Some(n) = n_train {
            spec.n_train = n;
        }
        if let Some(n) = n_test {
            spec.n_test = n;
        }
    }
    let reports = specs.iter().map(run_experiment).collect::<crate::Result<Vec<_>>>()?;
    let config = json!({
        "command": "evaluate",
        "standard_suite": standard_suite,
        "plot_data": run.plot_data,
        "experiments": specs,
    });
    write_reports(&Out::new(&common.out)?, &config, &reports, run.plot_data, "report")
}

fn sweep(common: &Common, run: &RunArgs, k: &str) -> CliResult<()> {
    let ks = parse_k_list(k)?;
    let mut spec: ExperimentSpec = require(&common.config, "sweep")?;
    apply_run_args(&mut spec, common, run);
    let reports = time_discretization_sweep(&spec, &ks)?;
    let config = json!({
        "command": "sweep",
        "ks": ks,
        "plot_data": run.plot_data,
        "experiment": spec,
    });
    write_reports(&Out::new(&common.out)?, &config, &reports, run.plot_data, "sweep")
}
