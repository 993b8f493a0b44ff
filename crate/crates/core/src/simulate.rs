//! Euler–Maruyama trajectories for the process catalog and conversion to
//! training observations.
//!
//! Randomness comes from `ChaCha20Rng::seed_from_u64(seed)` with standard
//! normal variates drawn through `rand_distr::StandardNormal` (ziggurat).
//! Both are platform independent, so a seed pins a trajectory bit for bit.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;

/// The SDE catalog `dX = f(X) dt + σ(X) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProcessRepr", into = "ProcessRepr")]
pub enum ProcessSpec {
    /// `f = −μx`, `σ = b exp(−x²)`. Mean reverting for `μ > 0`.
    ExpDecayVol { mu: f64, b: f64 },
    /// `f = sin(2kπx)`, `σ = b cos(2kπx)`.
    Trigonometric { k_freq: f64, b: f64 },
    /// `f = μx`, `σ = sigma·x`.
    Gbm { mu: f64, sigma: f64 },
    /// `f = −θx`, `σ = sigma`. Mean reverting for `θ > 0`.
    Ou { theta: f64, sigma: f64 },
}

impl ProcessSpec {
    pub fn drift_of(&self, x: f64) -> f64 {
        match *self {
            Self::ExpDecayVol { mu, .. } => -mu * x,
            Self::Trigonometric { k_freq, .. } => (2.0 * k_freq * PI * x).sin(),
            Self::Gbm { mu, .. } => mu * x,
            Self::Ou { theta, .. } => -theta * x,
        }
    }

    pub fn vol_of(&self, x: f64) -> f64 {
        match *self {
            Self::ExpDecayVol { b, .. } => b * (-x * x).exp(),
            Self::Trigonometric { k_freq, b } => b * (2.0 * k_freq * PI * x).cos(),
            Self::Gbm { sigma, .. } => sigma * x,
            Self::Ou { sigma, .. } => sigma,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ExpDecayVol { .. } => "ExpDecayVol",
            Self::Trigonometric { .. } => "Trigonometric",
            Self::Gbm { .. } => "GBM",
            Self::Ou { .. } => "OU",
        }
    }

    fn params(&self) -> BTreeMap<String, f64> {
        let pairs: [(&str, f64); 2] = match *self {
            Self::ExpDecayVol { mu, b } => [("mu", mu), ("b", b)],
            Self::Trigonometric { k_freq, b } => [("k_freq", k_freq), ("b", b)],
            Self::Gbm { mu, sigma } => [("mu", mu), ("sigma", sigma)],
            Self::Ou { theta, sigma } => [("theta", theta), ("sigma", sigma)],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ProcessRepr {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

impl TryFrom<ProcessRepr> for ProcessSpec {
    type Error = Error;

    fn try_from(r: ProcessRepr) -> Result<Self> {
        let get = |name: &str, default: Option<f64>| {
            r.params
                .get(name)
                .copied()
                .or(default)
                .ok_or_else(|| Error::InvalidInput(format!("process parameter {name:?} missing")))
        };
        Ok(match r.family.to_ascii_lowercase().as_str() {
            "expdecayvol" | "exp_decay_vol" => Self::ExpDecayVol {
                mu: get("mu", None)?,
                b: get("b", None)?,
            },
            "trigonometric" | "trig" => Self::Trigonometric {
                k_freq: get("k_freq", Some(1.0))?,
                b: get("b", None)?,
            },
            "gbm" => Self::Gbm {
                mu: get("mu", None)?,
                sigma: get("sigma", None)?,
            },
            "ou" => Self::Ou {
                theta: get("theta", None)?,
                sigma: get("sigma", None)?,
            },
            other => return Err(Error::InvalidInput(format!("unknown process family {other:?}"))),
        })
    }
}

impl From<ProcessSpec> for ProcessRepr {
    fn from(p: ProcessSpec) -> Self {
        Self {
            family: p.name().to_string(),
            params: p.params(),
        }
    }
}

/// Everything needed to reproduce one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(flatten)]
    pub process: ProcessSpec,
    pub x0: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn run(&self) -> Result<Trajectory> {
        euler_maruyama(&self.process, self.x0, self.dt, self.n_steps, self.seed)
    }
}

/// Sampled path: `times[n]`, `values.row(n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Points,
    pub seed: u64,
    pub process: Option<ProcessSpec>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: Points, seed: u64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::TooShort(times.len()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        Ok(Self {
            times,
            values,
            seed,
            process: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    /// Joins one-dimensional trajectories on a shared time grid into one
    /// multi-dimensional trajectory.
    pub fn stack(parts: &[Trajectory]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyInput("trajectories"))?;
        let n = first.len();
        let d: usize = parts.iter().map(Trajectory::dim).sum();
        let mut data = Vec::with_capacity(n * d);
        for p in parts {
            if p.times != first.times {
                return Err(Error::InvalidInput("stacked trajectories must share times".into()));
            }
        }
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.values.row(i));
            }
        }
        Ok(Self {
            times: first.times.clone(),
            values: Points::new(d, data)?,
            seed: first.seed,
            process: None,
        })
    }

    /// Writes `t,x` (or `t,x1,...,xd`) rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        if self.dim() == 1 {
            header.push("x".into());
        } else {
            header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        }
        w.write_record(&header).map_err(io_err)?;
        for (t, x) in self.times.iter().zip(self.values.iter()) {
            let mut rec = vec![format!("{t:.16e}")];
            rec.extend(x.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(())
    }

    /// Lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = r.headers().map_err(io_err)?.clone();
        if headers.len() < 2 || &headers[0] != "t" {
            return Err(Error::InvalidInput(
                "trajectory CSV must start with a `t` column".into(),
            ));
        }
        let dim = headers.len() - 1;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(io_err)?;
            let mut it = rec.iter().map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")))
            });
            times.push(it.next().ok_or(Error::EmptyInput("row"))??);
            for v in it {
                data.push(v?);
            }
        }
        Self::new(times, Points::new(dim, data)?, 0)
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::InvalidInput(e.to_string())
}

/// `X_{n+1} = X_n + f(X_n) Δt + σ(X_n) √Δt ξ_n`, `ξ_n ~ N(0, 1)` i.i.d.
pub fn euler_maruyama(
    process: &ProcessSpec,
    x0: f64,
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if n_steps == 0 {
        return Err(Error::InvalidInput("n_steps must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sqrt_dt = dt.sqrt();
    let mut values = Vec::with_capacity(n_steps + 1);
    values.push(x0);
    let mut x = x0;
    for step in 0..n_steps {
        let xi: f64 = StandardNormal.sample(&mut rng);
        x = x + process.drift_of(x) * dt + process.vol_of(x) * sqrt_dt * xi;
        if !x.is_finite() {
            return Err(Error::NonFiniteState { step: step + 1 });
        }
        values.push(x);
    }
    let times = (0..=n_steps).map(|n| n as f64 * dt).collect();
    Ok(Trajectory {
        times,
        values: Points::from_scalars(values),
        seed,
        process: Some(*process),
    })
}

/// Keeps samples `0, k, 2k, …`.
pub fn subsample(traj: &Trajectory, k: usize) -> Result<Trajectory> {
    if k == 0 {
        return Err(Error::InvalidInput("subsampling factor must be >= 1".into()));
    }
    if traj.len() <= k {
        return Err(Error::FactorTooLarge { k, len: traj.len() });
    }
    let idx: Vec<usize> = (0..traj.len()).step_by(k).collect();
    Ok(Trajectory {
        times: idx.iter().map(|&i| traj.times[i]).collect(),
        values: traj.values.select(&idx),
        seed: traj.seed,
        process: traj.process,
    })
}

/// Training triples `(X_n, Y_n, Δt_n)` with scalar increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub x: Points,
    pub y: Vec<f64>,
    pub dt: Vec<f64>,
}

impl ObservationSet {
    pub fn new(x: Points, y: Vec<f64>, dt: Vec<f64>) -> Result<Self> {
        if y.len() != x.len() || dt.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: if y.len() != x.len() { y.len() } else { dt.len() },
            });
        }
        if dt.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput("all dt must be positive".into()));
        }
        Ok(Self { x, y, dt })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mean_dt(&self) -> f64 {
        self.dt.iter().sum::<f64>() / self.dt.len() as f64
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            dt: idx.iter().map(|&i| self.dt[i]).collect(),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            x: self.x.slice(start, end),
            y: self.y[start..end].to_vec(),
            dt: self.dt[start..end].to_vec(),
        }
    }
}

/// Observations of a `d`-dimensional path: shared inputs, one increment
/// column per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiObservationSet {
    pub x: Points,
    pub y: Vec<Vec<f64>>,
    pub dt: Vec<f64>,
}

impl MultiObservationSet {
    pub fn dims(&self) -> usize {
        self.y.len()
    }

    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    /// The scalar problem of output dimension `i`.
    pub fn component(&self, i: usize) -> ObservationSet {
        ObservationSet {
            x: self.x.clone(),
            y: self.y[i].clone(),
            dt: self.dt.clone(),
        }
    }
}

/// `X_n = values[n]`, `Y_n = values[n+1] − values[n]`, `Δt_n = t_{n+1} − t_n`
/// for a one-dimensional trajectory.
pub fn to_observations(traj: &Trajectory) -> Result<ObservationSet> {
    if traj.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: traj.dim(),
        });
    }
    let multi = to_multi_observations(traj)?;
    Ok(multi.component(0))
}

pub fn to_multi_observations(traj: &Trajectory) -> Result<MultiObservationSet> {
    let len = traj.len();
    if len < 2 {
        return Err(Error::TooShort(len));
    }
    let n = len - 1;
    let d = traj.dim();
    let x = traj.values.slice(0, n);
    let y = (0..d)
        .map(|j| {
            (0..n)
                .map(|i| traj.values.row(i + 1)[j] - traj.values.row(i)[j])
                .collect()
        })
        .collect();
    let dt: Vec<f64> = traj.times.windows(2).map(|w| w[1] - w[0]).collect();
    if dt.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidInput("times must be strictly increasing".into()));
    }
    Ok(MultiObservationSet { x, y, dt })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_values() {
        let p = ProcessSpec::ExpDecayVol { mu: 5.0, b: 1.0 };
        assert_eq!((p.drift_of(0.0), p.vol_of(0.0)), (0.0, 1.0));

        let p = ProcessSpec::Trigonometric { k_freq: 1.0, b: 0.5 };
        assert!((p.drift_of(0.25) - 1.0).abs() < 1e-15);
        assert!(p.vol_of(0.25).abs() < 1e-15);

        let p = ProcessSpec::Gbm { mu: 2.0, sigma: 1.0 };
        assert_eq!((p.drift_of(1.0), p.vol_of(1.0)), (2.0, 1.0));
        assert_eq!(p.vol_of(-2.0), -2.0);

        let p = ProcessSpec::Ou { theta: 5.0, sigma: 1.0 };
        assert_eq!((p.drift_of(2.0), p.vol_of(2.0)), (-10.0, 1.0));
    }

    #[test]
    fn zero_noise_is_explicit_euler() {
        let p = ProcessSpec::Ou { theta: 5.0, sigma: 0.0 };
        let t = euler_maruyama(&p, 1.0, 0.1, 1, 3).unwrap();
        assert_eq!(t.values.as_flat(), &[1.0, 0.5]);
        assert_eq!(t.times, vec![0.0, 0.1]);
    }

    #[test]
    fn explosive_parameters_detected() {
        let p = ProcessSpec::Gbm { mu: 1e300, sigma: 0.0 };
        assert!(matches!(
            euler_maruyama(&p, 1e10, 1.0, 10, 0),
            Err(Error::NonFiniteState { .. })
        ));
    }

    #[test]
    fn quadratic_variation_near_origin() {
        let p = ProcessSpec::ExpDecayVol { mu: 5.0, b: 1.0 };
        let dt = 0.01;
        let t = euler_maruyama(&p, 0.0, dt, 1000, 11).unwrap();
        let obs = to_observations(&t).unwrap();
        let near: Vec<f64> = obs
            .x
            .iter()
            .zip(&obs.y)
            .filter(|(x, _)| x[0].abs() < 0.2)
            .map(|(x, y)| (y - p.drift_of(x[0]) * dt).powi(2) / dt)
            .collect();
        assert!(near.len() > 50, "only {} points near 0", near.len());
        let mean = near.iter().sum::<f64>() / near.len() as f64;
        assert!((mean - 1.0).abs() < 0.3, "mean squared scaled increment {mean}");
    }

    #[test]
    fn subsample_shapes() {
        let p = ProcessSpec::Ou { theta: 1.0, sigma: 1.0 };
        let t = euler_maruyama(&p, 0.0, 0.01, 10, 1).unwrap();
        assert_eq!(subsample(&t, 1).unwrap(), t);
        let s = subsample(&t, 5).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.times, vec![0.0, 5.0 * 0.01, 10.0 * 0.01]);
        assert!(matches!(subsample(&t, 11), Err(Error::FactorTooLarge { .. })));
    }

    #[test]
    fn subsampled_increments_telescope() {
        let p = ProcessSpec::ExpDecayVol { mu: 5.0, b: 1.0 };
        let t = euler_maruyama(&p, 0.3, 0.01, 40, 5).unwrap();
        let fine = to_observations(&t).unwrap();
        let coarse = to_observations(&subsample(&t, 2).unwrap()).unwrap();
        for (i, y) in coarse.y.iter().enumerate() {
            let sum = fine.y[2 * i] + fine.y[2 * i + 1];
            assert!((y - sum).abs() < 1e-14);
            assert!((coarse.dt[i] - 0.02).abs() < 1e-15);
        }
    }

    #[test]
    fn observations_from_values() {
        let t = Trajectory::new(vec![0.0, 0.1, 0.2], Points::from_scalars(vec![0.0, 1.0, 3.0]), 0)
            .unwrap();
        let o = to_observations(&t).unwrap();
        assert_eq!(o.x.as_flat(), &[0.0, 1.0]);
        assert_eq!(o.y, vec![1.0, 2.0]);
        assert!((o.dt[0] - 0.1).abs() < 1e-15 && (o.dt[1] - 0.1).abs() < 1e-15);

        let flat = Trajectory::new(vec![0.0, 1.0, 2.0], Points::from_scalars(vec![4.0; 3]), 0).unwrap();
        assert_eq!(to_observations(&flat).unwrap().y, vec![0.0, 0.0]);
    }

    #[test]
    fn cumulative_increments_reproduce_path() {
        let p = ProcessSpec::Trigonometric { k_freq: 1.0, b: 0.5 };
        let t = euler_maruyama(&p, 0.1, 0.01, 200, 9).unwrap();
        let o = to_observations(&t).unwrap();
        let mut x = t.values.row(0)[0];
        for (n, y) in o.y.iter().enumerate() {
            x += y;
            assert!((x - t.values.row(n + 1)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_validation() {
        assert!(matches!(
            Trajectory::new(vec![0.0], Points::from_scalars(vec![1.0]), 0),
            Err(Error::TooShort(1))
        ));
        assert!(Trajectory::new(vec![0.0, 0.0], Points::from_scalars(vec![1.0, 2.0]), 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = ProcessSpec::Gbm { mu: 2.0, sigma: 1.0 };
        let t = euler_maruyama(&p, 1.0, 0.001, 50, 4).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, t.times);
        assert_eq!(back.values, t.values);
    }

    #[test]
    fn stacked_trajectories() {
        let a = euler_maruyama(&ProcessSpec::Ou { theta: 5.0, sigma: 1.0 }, 1.0, 0.01, 5, 1).unwrap();
        let b = euler_maruyama(&ProcessSpec::Ou { theta: 5.0, sigma: 1.0 }, -1.0, 0.01, 5, 2).unwrap();
        let s = Trajectory::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dim(), 2);
        let m = to_multi_observations(&s).unwrap();
        assert_eq!(m.y[0], to_observations(&a).unwrap().y);
        assert_eq!(m.y[1], to_observations(&b).unwrap().y);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,x1,x2\n"));
    }

    #[test]
    fn process_json_shape() {
        let cfg = SimulationConfig {
            process: ProcessSpec::Ou { theta: 5.0, sigma: 1.0 },
            x0: 1.0,
            dt: 0.001,
            n_steps: 1000,
            seed: 7,
        };
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["family"], "OU");
        assert_eq!(v["params"]["theta"], 5.0);
        assert_eq!(v["n_steps"], 1000);
        let back: SimulationConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn deterministic_under_seed(seed in any::<u64>(), k in 1usize..6) {
                let p = ProcessSpec::ExpDecayVol { mu: 5.0, b: 1.0 };
                let a = euler_maruyama(&p, 0.5, 0.01, 60, seed).unwrap();
                let b = euler_maruyama(&p, 0.5, 0.01, 60, seed).unwrap();
                prop_assert_eq!(&a, &b);
                let o = to_observations(&subsample(&a, k).unwrap()).unwrap();
                for d in &o.dt {
                    prop_assert!((d - k as f64 * 0.01).abs() < 1e-12);
                }
            }
        }
    }
}
