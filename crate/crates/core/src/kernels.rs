//! Covariance functions, hyperparameter bundles and their search-space encoding.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{distance, Points};

/// Lengthscale floor for degenerate (constant) trajectories.
pub const MIN_LENGTHSCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    Matern52,
    Linear,
    WhiteNoise,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matern52" | "matern" => Ok(Self::Matern52),
            "linear" => Ok(Self::Linear),
            "whitenoise" | "white_noise" => Ok(Self::WhiteNoise),
            other => Err(Error::InvalidInput(format!("unknown kernel family {other:?}"))),
        }
    }
}

/// A parameterized covariance function.
///
/// The Matérn smoothness is fixed at 5/2 and is not a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum KernelSpec {
    /// `σ²(1 + √5 r/l + 5r²/(3l²)) exp(−√5 r/l)`, `r = ‖x − y‖`.
    Matern52 { variance: f64, lengthscale: f64 },
    /// `σ²(xᵀy + c)`.
    Linear { variance: f64, offset: f64 },
    /// `c` when `x == y` bit for bit, else 0.
    WhiteNoise { level: f64 },
}

impl KernelSpec {
    pub fn matern52(variance: f64, lengthscale: f64) -> Result<Self> {
        let k = Self::Matern52 {
            variance,
            lengthscale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn linear(variance: f64, offset: f64) -> Result<Self> {
        let k = Self::Linear { variance, offset };
        k.validate()?;
        Ok(k)
    }

    pub fn white_noise(level: f64) -> Result<Self> {
        let k = Self::WhiteNoise { level };
        k.validate()?;
        Ok(k)
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            Self::Matern52 { .. } => KernelFamily::Matern52,
            Self::Linear { .. } => KernelFamily::Linear,
            Self::WhiteNoise { .. } => KernelFamily::WhiteNoise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |cond: bool, what: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{what} in {self:?}")))
            }
        };
        match *self {
            Self::Matern52 {
                variance,
                lengthscale,
            } => {
                ok(variance.is_finite() && variance > 0.0, "variance must be > 0")?;
                ok(
                    lengthscale.is_finite() && lengthscale > 0.0,
                    "lengthscale must be > 0",
                )
            }
            Self::Linear { variance, offset } => {
                ok(variance.is_finite() && variance > 0.0, "variance must be > 0")?;
                ok(offset.is_finite() && offset >= 0.0, "offset must be >= 0")
            }
            Self::WhiteNoise { level } => ok(level.is_finite() && level >= 0.0, "level must be >= 0"),
        }
    }

    /// Kernel value; assumes validated parameters.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Self::Matern52 {
                variance,
                lengthscale,
            } => {
                let a = 5f64.sqrt() * distance(x, y) / lengthscale;
                variance * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            Self::Linear { variance, offset } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                variance * (dot + offset)
            }
            Self::WhiteNoise { level } => {
                let same = x.len() == y.len()
                    && x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits());
                if same {
                    level
                } else {
                    0.0
                }
            }
        }
    }

    /// Parameter names in encoding order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Self::Matern52 { .. } => &["variance", "lengthscale"],
            Self::Linear { .. } => &["variance", "offset"],
            Self::WhiteNoise { .. } => &["level"],
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        match (*self, name) {
            (Self::Matern52 { variance, .. }, "variance") => Some(variance),
            (Self::Matern52 { lengthscale, .. }, "lengthscale") => Some(lengthscale),
            (Self::Linear { variance, .. }, "variance") => Some(variance),
            (Self::Linear { offset, .. }, "offset") => Some(offset),
            (Self::WhiteNoise { level }, "level") => Some(level),
            _ => None,
        }
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match (self, name) {
            (Self::Matern52 { variance, .. }, "variance") => variance,
            (Self::Matern52 { lengthscale, .. }, "lengthscale") => lengthscale,
            (Self::Linear { variance, .. }, "variance") => variance,
            (Self::Linear { offset, .. }, "offset") => offset,
            (Self::WhiteNoise { level }, "level") => level,
            (k, n) => {
                return Err(Error::InvalidParams(format!(
                    "{:?} has no parameter {n:?}",
                    k.family()
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    /// The unoptimized default: lengthscale from the data, everything else 1.
    pub fn default_for(family: KernelFamily, x: &Points) -> Result<Self> {
        Ok(match family {
            KernelFamily::Matern52 => Self::Matern52 {
                variance: 1.0,
                lengthscale: default_lengthscale(x)?.max(MIN_LENGTHSCALE),
            },
            KernelFamily::Linear => Self::Linear {
                variance: 1.0,
                offset: 1.0,
            },
            KernelFamily::WhiteNoise => Self::WhiteNoise { level: 1.0 },
        })
    }
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    family: KernelFamily,
    params: BTreeMap<String, f64>,
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;

    fn try_from(r: KernelRepr) -> Result<Self> {
        let get = |name: &str| {
            r.params
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidParams(format!("missing parameter {name:?}")))
        };
        let k = match r.family {
            KernelFamily::Matern52 => Self::Matern52 {
                variance: get("variance")?,
                lengthscale: get("lengthscale")?,
            },
            KernelFamily::Linear => Self::Linear {
                variance: get("variance")?,
                offset: get("offset")?,
            },
            KernelFamily::WhiteNoise => Self::WhiteNoise {
                level: get("level")?,
            },
        };
        k.validate()?;
        Ok(k)
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        let params = k
            .param_names()
            .iter()
            .map(|n| (n.to_string(), k.param(n).unwrap_or_default()))
            .collect();
        Self {
            family: k.family(),
            params,
        }
    }
}

/// Checked kernel evaluation.
pub fn eval(kernel: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    kernel.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(kernel.value(x, y))
}

/// Gram matrix `|X| × |Z|` with entries `k(X_i, Z_j)`.
pub fn gram(kernel: &KernelSpec, x: &Points, z: &Points) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    if x.is_empty() || z.is_empty() {
        return Err(Error::EmptyInput("gram point list"));
    }
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: z.dim(),
        });
    }
    Ok(DMatrix::from_fn(x.len(), z.len(), |i, j| {
        kernel.value(x.row(i), z.row(j))
    }))
}

/// Diagonal `k(x_i, x_i)`.
pub fn gram_diag(kernel: &KernelSpec, x: &Points) -> Vec<f64> {
    x.iter().map(|p| kernel.value(p, p)).collect()
}

/// Mean Euclidean distance over ordered pairs `i ≠ j`.
pub fn default_lengthscale(x: &Points) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += distance(x.row(i), x.row(j));
        }
    }
    Ok(2.0 * total / (n as f64 * (n - 1) as f64))
}

/// Kernel hyperparameters of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Prior on the drift.
    pub drift_kernel: KernelSpec,
    /// Prior on the volatility.
    pub vol_kernel: KernelSpec,
    /// Discretization-noise variance.
    pub lambda: f64,
    /// Noise variance used when smoothing the raw volatility minimizer.
    pub gamma: f64,
}

/// Default smoothing-noise variance; never stated in the source material.
pub const DEFAULT_GAMMA: f64 = 1e-4;
/// `λ = C · mean(Δt)`.
pub const DEFAULT_LAMBDA_FACTOR: f64 = 0.01;

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        self.drift_kernel.validate()?;
        self.vol_kernel.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParams(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Unoptimized defaults for the given kernel families on training inputs `x`.
    pub fn defaults(
        x: &Points,
        drift: KernelFamily,
        vol: KernelFamily,
        mean_dt: f64,
    ) -> Result<Self> {
        Ok(Self {
            drift_kernel: KernelSpec::default_for(drift, x)?,
            vol_kernel: KernelSpec::default_for(vol, x)?,
            lambda: DEFAULT_LAMBDA_FACTOR * mean_dt,
            gamma: DEFAULT_GAMMA,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamTarget {
    Drift,
    Vol,
    Lambda,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Log10,
    Linear,
}

/// One searched coordinate. Bounds are in encoded units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDim {
    pub target: ParamTarget,
    /// Kernel parameter name; ignored for `lambda`/`gamma`.
    #[serde(default)]
    pub param: String,
    pub scale: Scale,
    pub lo: f64,
    pub hi: f64,
}

impl ParamDim {
    fn label(&self) -> String {
        match self.target {
            ParamTarget::Drift => format!("drift.{}", self.param),
            ParamTarget::Vol => format!("vol.{}", self.param),
            ParamTarget::Lambda => "lambda".into(),
            ParamTarget::Gamma => "gamma".into(),
        }
    }
}

/// Box of searched hyperparameters plus the template fixing everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub template: HyperParams,
    pub dims: Vec<ParamDim>,
}

/// Decades searched on either side of a positive default.
pub const LOG_HALF_WIDTH: f64 = 3.0;
/// Linear-kernel offset range.
pub const OFFSET_RANGE: (f64, f64) = (0.0, 10.0);

impl SearchSpace {
    /// Default box: every positive parameter in `log10(default) ± 3`,
    /// linear offsets in `[0, 10]`, λ and γ only if `include_noise`.
    pub fn around(template: HyperParams, include_noise: bool) -> Self {
        let mut dims = Vec::new();
        for (target, k) in [
            (ParamTarget::Drift, template.drift_kernel),
            (ParamTarget::Vol, template.vol_kernel),
        ] {
            for name in k.param_names() {
                let v = k.param(name).unwrap_or(1.0);
                dims.push(if *name == "offset" {
                    ParamDim {
                        target,
                        param: name.to_string(),
                        scale: Scale::Linear,
                        lo: OFFSET_RANGE.0,
                        hi: OFFSET_RANGE.1,
                    }
                } else {
                    log_dim(target, name, v)
                });
            }
        }
        if include_noise {
            dims.push(log_dim(ParamTarget::Lambda, "", template.lambda));
            dims.push(log_dim(ParamTarget::Gamma, "", template.gamma));
        }
        Self { template, dims }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.dims.iter().map(|d| (d.lo, d.hi)).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.dims.iter().map(ParamDim::label).collect()
    }
}

fn log_dim(target: ParamTarget, name: &str, default: f64) -> ParamDim {
    let centre = if default > 0.0 { default.log10() } else { 0.0 };
    ParamDim {
        target,
        param: name.to_string(),
        scale: Scale::Log10,
        lo: centre - LOG_HALF_WIDTH,
        hi: centre + LOG_HALF_WIDTH,
    }
}

const BOUND_SLACK: f64 = 1e-9;

fn read(hp: &HyperParams, dim: &ParamDim) -> Result<f64> {
    match dim.target {
        ParamTarget::Drift => hp.drift_kernel.param(&dim.param),
        ParamTarget::Vol => hp.vol_kernel.param(&dim.param),
        ParamTarget::Lambda => Some(hp.lambda),
        ParamTarget::Gamma => Some(hp.gamma),
    }
    .ok_or_else(|| Error::InvalidParams(format!("no parameter {}", dim.label())))
}

/// Hyperparameters to a point of the search box.
pub fn encode_params(hp: &HyperParams, space: &SearchSpace) -> Result<Vec<f64>> {
    space
        .dims
        .iter()
        .map(|dim| {
            let raw = read(hp, dim)?;
            let v = match dim.scale {
                Scale::Log10 => raw.log10(),
                Scale::Linear => raw,
            };
            check_bounds(dim, v)?;
            Ok(v)
        })
        .collect()
}

/// A point of the search box back to hyperparameters.
pub fn decode_params(v: &[f64], space: &SearchSpace) -> Result<HyperParams> {
    if v.len() != space.len() {
        return Err(Error::DimensionMismatch {
            expected: space.len(),
            got: v.len(),
        });
    }
    let mut hp = space.template;
    for (dim, &x) in space.dims.iter().zip(v) {
        check_bounds(dim, x)?;
        let raw = match dim.scale {
            Scale::Log10 => 10f64.powf(x),
            Scale::Linear => x,
        };
        match dim.target {
            ParamTarget::Drift => hp.drift_kernel.set_param(&dim.param, raw)?,
            ParamTarget::Vol => hp.vol_kernel.set_param(&dim.param, raw)?,
            ParamTarget::Lambda => hp.lambda = raw,
            ParamTarget::Gamma => hp.gamma = raw,
        }
    }
    hp.validate()?;
    Ok(hp)
}

fn check_bounds(dim: &ParamDim, v: f64) -> Result<()> {
    let slack = BOUND_SLACK * (1.0 + dim.lo.abs().max(dim.hi.abs()));
    if !(v >= dim.lo - slack && v <= dim.hi + slack) {
        return Err(Error::OutOfBounds {
            name: dim.label(),
            value: v,
            lo: dim.lo,
            hi: dim.hi,
        });
    }
    Ok(())
}
