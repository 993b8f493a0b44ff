use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sde_recover::simulate::Trajectory;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sde-recover"));
    c.env_remove("SDE_RECOVER_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const OU: &str = r#"
family = "OU"
x0 = 1.0
dt = 0.001
n_steps = 1000
seed = 7
[params]
theta = 5.0
sigma = 1.0
"#;

const EXPERIMENT: &str = r#"
dt = 0.01
n_train = 40
n_test = 30
seed = 3
timing = false
[fit]
optimizer = "NewtonArmijo"
[process]
family = "ExpDecayVol"
params = { mu = 5.0, b = 1.0 }
[cv]
budget = 4
m_partitions = 2
[benchmark]
budget = 6
"#;

fn simulate(dir: &TempDir, config: &str, sub: &str) -> std::path::PathBuf {
    let cfg = write(dir.path(), &format!("{sub}.toml"), config);
    let out = dir.path().join(sub);
    ok(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    out.join("trajectory.csv")
}

#[test]
fn simulate_writes_reproducible_csv_with_config_echo() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, OU, "a");
    let b = simulate(&dir, OU, "b");
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    let echo: Value = serde_json::from_str(lines.next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(echo["seed"], 7);
    assert_eq!(echo["family"], "OU");
    assert_eq!(lines.next().unwrap(), "t,x");
    assert_eq!(lines.count(), 1001);
    let traj = Trajectory::read_csv(fs::File::open(&a).unwrap()).unwrap();
    assert_eq!(traj.len(), 1001);
}

#[test]
fn seed_flag_overrides_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "ou.toml", OU);
    let out = dir.path().join("s");
    ok(&["simulate", "-c", &cfg, "--seed", "8", "-o", out.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(text.lines().next().unwrap().contains("\"seed\":8"));
    assert_ne!(text, fs::read_to_string(simulate(&dir, OU, "t")).unwrap());
}

#[test]
fn gbm_increments_reconstruct_the_noise() {
    let dir = TempDir::new().unwrap();
    let gbm = r#"
        family = "GBM"
        x0 = 1.0
        dt = 0.001
        n_steps = 2000
        seed = 11
        params = { mu = 2.0, sigma = 1.0 }
    "#;
    let path = simulate(&dir, gbm, "gbm");
    let traj = Trajectory::read_csv(fs::File::open(path).unwrap()).unwrap();
    let x = traj.values.column(0);
    let n = x.len() - 1;
    let total: f64 = x.windows(2).map(|w| w[1] - w[0]).sum();
    assert!((x[0] + total - x[n]).abs() < 1e-12 * x[n].abs().max(1.0));
    let xi: Vec<f64> = x
        .windows(2)
        .map(|w| (w[1] - w[0] - 2.0 * w[0] * 0.001) / (w[0] * 0.001f64.sqrt()))
        .collect();
    let mean = xi.iter().sum::<f64>() / n as f64;
    let var = xi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.1, "mean {mean}");
    assert!((0.85..1.15).contains(&var), "var {var}");
}

#[test]
fn fit_learn_and_benchmark_pipeline() {
    let dir = TempDir::new().unwrap();
    let exp = r#"
        family = "ExpDecayVol"
        x0 = 0.0
        dt = 0.01
        n_steps = 60
        seed = 2
        params = { mu = 5.0, b = 1.0 }
    "#;
    let traj = simulate(&dir, exp, "sim");
    let traj = traj.to_str().unwrap();
    let fit_cfg = write(dir.path(), "fit.toml", "optimizer = \"NewtonArmijo\"\n");

    let fit_out = dir.path().join("fit");
    ok(&["fit", traj, "-c", &fit_cfg, "-o", fit_out.to_str().unwrap()]);
    let report = json(&fit_out.join("fit.json"));
    assert_eq!(report["config"]["fit"]["optimizer"], "NewtonArmijo");
    assert_eq!(report["result"]["sigma_bar"].as_array().unwrap().len(), 60);
    let preds = fs::read_to_string(fit_out.join("predictions.csv")).unwrap();
    assert!(preds.lines().next().unwrap().starts_with("# {"));
    assert_eq!(preds.lines().nth(1).unwrap(), "x,f_pred,sigma_pred");
    assert_eq!(preds.lines().count(), 62);

    let again = dir.path().join("fit2");
    ok(&["fit", traj, "-c", &fit_cfg, "-o", again.to_str().unwrap()]);
    assert_eq!(preds, fs::read_to_string(again.join("predictions.csv")).unwrap());

    let learn_out = dir.path().join("learn");
    ok(&["learn", traj, "--optimizer", "newton", "--budget", "3", "--seed", "4", "-o", learn_out.to_str().unwrap()]);
    let learned = json(&learn_out.join("learned.json"));
    assert_eq!(learned["config"]["seed"], 4);
    assert_eq!(learned["evaluations"], 3);
    let history = fs::read_to_string(learn_out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);

    let refit = dir.path().join("refit");
    let hp = learn_out.join("learned.json");
    ok(&["fit", traj, "--optimizer", "newton", "--hp", hp.to_str().unwrap(), "--grid", "25", "-o", refit.to_str().unwrap()]);
    let refit_json = json(&refit.join("fit.json"));
    assert_eq!(refit_json["config"]["fit"]["hp"], learned["hp"]);
    assert_eq!(fs::read_to_string(refit.join("predictions.csv")).unwrap().lines().count(), 27);

    let bench = dir.path().join("bench");
    ok(&["benchmark", traj, "--budget", "5", "-o", bench.to_str().unwrap()]);
    let b = json(&bench.join("benchmark.json"));
    assert!(b["noise_level"].as_f64().unwrap() > 0.0);
    let text = fs::read_to_string(bench.join("benchmark_predictions.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "x,f_pred,sigma_pred,sigma_pred_full");
}

#[test]
fn evaluate_is_reproducible_without_timing() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "exp.toml", EXPERIMENT);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["evaluate", "-c", &cfg, "--plot-data", "-o", a.to_str().unwrap()]);
    ok(&["evaluate", "-c", &cfg, "--plot-data", "-o", b.to_str().unwrap()]);
    for f in ["report.json", "table.csv", "predictions_ExpDecayVol_k1_LearnedKernel.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = json(&a.join("report.json"));
    assert_eq!(report["config"]["experiments"][0]["seed"], 3);
    assert_eq!(report["reports"][0]["rows"].as_array().unwrap().len(), 3);
    let table = fs::read_to_string(a.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn sweep_records_scaled_lambda() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "exp.toml", EXPERIMENT);
    let out = dir.path().join("sweep");
    ok(&["sweep", "-c", &cfg, "--k", "1,3", "-o", out.to_str().unwrap()]);
    let report = json(&out.join("sweep.json"));
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["lambda"].as_f64().unwrap(), 1e-4);
    assert_eq!(reports[1]["lambda"].as_f64().unwrap(), 3.0 * 1e-4);
    assert_eq!(report["config"]["ks"], serde_json::json!([1, 3]));
}

#[test]
fn standard_suite_covers_four_processes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("suite");
    let args = [
        "evaluate",
        "--standard-suite",
        "--n-train",
        "30",
        "--n-test",
        "20",
        "--optimizer",
        "newton",
        "--budget",
        "3",
        "--no-timing",
        "-o",
        out.to_str().unwrap(),
    ];
    ok(&args);
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2 + 12);
    for p in ["ExpDecayVol", "Trigonometric", "GBM", "OU"] {
        assert_eq!(table.lines().filter(|l| l.starts_with(&format!("{p},"))).count(), 3);
    }
}

#[test]
fn json_configs_are_accepted() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "ou.json",
        r#"{"family": "OU", "x0": 0.0, "dt": 0.01, "n_steps": 10, "seed": 1, "params": {"theta": 1.0, "sigma": 0.5}}"#,
    );
    let out = dir.path().join("j");
    ok(&["simulate", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();

    assert_eq!(run(&["simulate", "-o", out]).status.code(), Some(2));
    let bad = write(dir.path(), "bad.toml", "family = \"OU\"\nx0 = \n");
    assert_eq!(run(&["simulate", "-c", &bad, "-o", out]).status.code(), Some(2));
    let unknown = write(dir.path(), "unknown.toml", "family = \"Heston\"\nx0 = 0.0\ndt = 0.1\nn_steps = 3\nseed = 0\n");
    assert_eq!(run(&["simulate", "-c", &unknown, "-o", out]).status.code(), Some(2));
    assert_eq!(run(&["fit", "/nonexistent.csv", "-o", out]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let blowup = write(
        dir.path(),
        "blowup.toml",
        "family = \"GBM\"\nx0 = 1.0\ndt = 1.0\nn_steps = 1000\nseed = 0\nparams = { mu = 1e100, sigma = 1.0 }\n",
    );
    assert_eq!(run(&["simulate", "-c", &blowup, "-o", out]).status.code(), Some(3));

    let mut huge = String::from("t,x\n");
    for i in 0..12 {
        huge.push_str(&format!("{i},{}\n", if i % 2 == 0 { 1e160 } else { -1e160 }));
    }
    let huge = write(dir.path(), "huge.csv", &huge);
    let matern = r#"{"family": "Matern52", "params": {"variance": 1.0, "lengthscale": 1.0}}"#;
    let hp = write(
        dir.path(),
        "hp.json",
        &format!(r#"{{"hp": {{"drift_kernel": {matern}, "vol_kernel": {matern}, "lambda": 1e-4, "gamma": 1e-4}}}}"#),
    );
    assert_eq!(run(&["fit", &huge, "--hp", &hp, "-o", out]).status.code(), Some(4));

    let cfg = write(dir.path(), "ou.toml", OU);
    let status = bin()
        .args(["simulate", "-c", &cfg, "-o", out])
        .env("SDE_RECOVER_THREADS", "0")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin()
        .args(["simulate", "-c", &cfg, "-o", out])
        .env("SDE_RECOVER_THREADS", "2")
        .status()
        .unwrap();
    assert!(status.success());
}
