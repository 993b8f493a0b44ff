//! MAP loss, closed-form drift, the volatility profile loss and the GP
//! predictors built on top of them.
//!
//! Notation: `Λ = diag(Δt)`, `Σ = diag(σ̄² Δt)`, `D = Σ + λI`,
//! `A = ΛKΛ + D`, `α = A⁻¹Y`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_diag, HyperParams};
use crate::numerics::{factor_spd, JitterPolicy, SpdFactor};
use crate::points::Points;
use crate::simulate::ObservationSet;

fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    Ok(())
}

/// `σ̄_n² Δt_n + λ`.
pub(crate) fn noise_variances(sigma: &[f64], dt: &[f64], lambda: f64) -> Vec<f64> {
    sigma
        .iter()
        .zip(dt)
        .map(|(s, d)| s * s * d + lambda)
        .collect()
}

/// `xᵀ M⁻¹ x` through the factor of `M`.
fn quad_form(factor: &SpdFactor, x: &DVector<f64>) -> Result<f64> {
    Ok(factor.half_solve(x)?.norm_squared())
}

/// `(Y−Λf̄)ᵀD⁻¹(Y−Λf̄) + Σ ln(σ̄²Δt+λ) + f̄ᵀK⁻¹f̄ + σ̄ᵀG⁻¹σ̄`.
pub fn map_loss(
    f_bar: &[f64],
    sigma_bar: &[f64],
    obs: &ObservationSet,
    hp: &HyperParams,
) -> Result<f64> {
    let n = obs.len();
    check_len(f_bar, n)?;
    check_len(sigma_bar, n)?;
    let jitter = JitterPolicy::default();
    let k = factor_spd(&gram(&hp.drift_kernel, &obs.x, &obs.x)?, &jitter)?;
    let g = factor_spd(&gram(&hp.vol_kernel, &obs.x, &obs.x)?, &jitter)?;
    let d = noise_variances(sigma_bar, &obs.dt, hp.lambda);

    let data: f64 = (0..n)
        .map(|i| {
            let r = obs.y[i] - obs.dt[i] * f_bar[i];
            r * r / d[i]
        })
        .sum();
    let log_term: f64 = d.iter().map(|v| v.ln()).sum();
    let drift_prior = quad_form(&k, &DVector::from_column_slice(f_bar))?;
    let vol_prior = quad_form(&g, &DVector::from_column_slice(sigma_bar))?;
    Ok(data + log_term + drift_prior + vol_prior)
}

/// Factor of `A = ΛKΛ + D` and `α = A⁻¹Y`.
struct DriftSystem {
    factor: SpdFactor,
    alpha: DVector<f64>,
    d: Vec<f64>,
}

/// `ΛKΛ` for the drift kernel on the training inputs.
fn scaled_drift_gram(obs: &ObservationSet, hp: &HyperParams) -> Result<DMatrix<f64>> {
    let mut k = gram(&hp.drift_kernel, &obs.x, &obs.x)?;
    scale_rows_cols(&mut k, &obs.dt);
    Ok(k)
}

fn scale_rows_cols(m: &mut DMatrix<f64>, dt: &[f64]) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= dt[i] * dt[j];
        }
    }
}

fn drift_system(
    lkl: &DMatrix<f64>,
    sigma: &[f64],
    obs: &ObservationSet,
    lambda: f64,
) -> Result<DriftSystem> {
    let d = noise_variances(sigma, &obs.dt, lambda);
    let mut a = lkl.clone();
    for (i, di) in d.iter().enumerate() {
        a[(i, i)] += di;
    }
    let factor = factor_spd(&a, &JitterPolicy::default())?;
    let alpha = factor.solve_vec(&DVector::from_column_slice(&obs.y))?;
    Ok(DriftSystem { factor, alpha, d })
}

/// `f̄*(σ̄) = KΛ(ΛKΛ + Σ + λI)⁻¹Y`, the minimizer of the MAP loss in `f̄`.
pub fn drift_given_sigma(
    sigma_bar: &[f64],
    obs: &ObservationSet,
    hp: &HyperParams,
) -> Result<Vec<f64>> {
    check_len(sigma_bar, obs.len())?;
    let k = gram(&hp.drift_kernel, &obs.x, &obs.x)?;
    let mut lkl = k.clone();
    scale_rows_cols(&mut lkl, &obs.dt);
    let sys = drift_system(&lkl, sigma_bar, obs, hp.lambda)?;
    let scaled = sys.alpha.component_mul(&DVector::from_column_slice(&obs.dt));
    Ok((k * scaled).as_slice().to_vec())
}

/// Posterior of the drift GP at query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPosterior {
    pub mean: Vec<f64>,
    /// Clamped at zero.
    pub variance: Vec<f64>,
    /// Smallest variance before clamping; rounding can push it below zero.
    pub min_raw_variance: f64,
}

/// Mean `K(x,X)Λα` and variance `K(x,x) − K(x,X)ΛA⁻¹ΛK(X,x)`.
pub fn drift_posterior(
    x: &Points,
    sigma_bar: &[f64],
    obs: &ObservationSet,
    hp: &HyperParams,
) -> Result<DriftPosterior> {
    check_len(sigma_bar, obs.len())?;
    let lkl = scaled_drift_gram(obs, hp)?;
    let sys = drift_system(&lkl, sigma_bar, obs, hp.lambda)?;

    // ΛK(X,x): N × m.
    let mut cross = gram(&hp.drift_kernel, &obs.x, x)?;
    for (i, mut row) in cross.row_iter_mut().enumerate() {
        row *= obs.dt[i];
    }
    let mean = cross.tr_mul(&sys.alpha);
    let w = sys.factor.half_solve_mat(&cross)?;
    let prior = gram_diag(&hp.drift_kernel, x);
    let mut min_raw = f64::INFINITY;
    let variance = prior
        .iter()
        .zip(w.column_iter())
        .map(|(k, col)| {
            let v = k - col.norm_squared();
            min_raw = min_raw.min(v);
            v.max(0.0)
        })
        .collect();
    Ok(DriftPosterior {
        mean: mean.as_slice().to_vec(),
        variance,
        min_raw_variance: min_raw,
    })
}

/// The MAP loss with `f̄` profiled out, together with its derivatives in `σ̄`.
///
/// Uses `min_f [(Y−Λf)ᵀD⁻¹(Y−Λf) + fᵀK⁻¹f] = YᵀA⁻¹Y`, so no inverse of the
/// (often badly conditioned) drift Gram matrix is ever formed.
pub struct ProfileObjective<'a> {
    obs: &'a ObservationSet,
    lambda: f64,
    lkl: DMatrix<f64>,
    g: SpdFactor,
    g_inverse: OnceLock<DMatrix<f64>>,
}

impl<'a> ProfileObjective<'a> {
    pub fn new(obs: &'a ObservationSet, hp: &HyperParams) -> Result<Self> {
        hp.validate()?;
        let lkl = scaled_drift_gram(obs, hp)?;
        let g = factor_spd(&gram(&hp.vol_kernel, &obs.x, &obs.x)?, &JitterPolicy::default())?;
        Ok(Self {
            obs,
            lambda: hp.lambda,
            lkl,
            g,
            g_inverse: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn check(&self, sigma: &DVector<f64>) -> Result<()> {
        check_len(sigma.as_slice(), self.obs.len())
    }

    fn value_from(&self, sys: &DriftSystem, sigma: &DVector<f64>) -> Result<f64> {
        let data = quad_form(&sys.factor, &DVector::from_column_slice(&self.obs.y))?;
        let log_term: f64 = sys.d.iter().map(|v| v.ln()).sum();
        let prior = quad_form(&self.g, sigma)?;
        Ok(data + log_term + prior)
    }

    pub fn value(&self, sigma: &DVector<f64>) -> Result<f64> {
        self.check(sigma)?;
        let sys = drift_system(&self.lkl, sigma.as_slice(), self.obs, self.lambda)?;
        self.value_from(&sys, sigma)
    }

    /// `∂L/∂σ̄_n = 2σ̄_nΔt_n (1/d_n − α_n²) + 2(G⁻¹σ̄)_n`.
    pub fn value_grad(&self, sigma: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check(sigma)?;
        let sys = drift_system(&self.lkl, sigma.as_slice(), self.obs, self.lambda)?;
        let value = self.value_from(&sys, sigma)?;
        let ginv_sigma = self.g.solve_vec(sigma)?;
        let grad = DVector::from_fn(sigma.len(), |n, _| {
            let s = 2.0 * sigma[n] * self.obs.dt[n];
            s * (1.0 / sys.d[n] - sys.alpha[n] * sys.alpha[n]) + 2.0 * ginv_sigma[n]
        });
        Ok((value, grad))
    }

    /// `H = diag(2Δt/d − s²/d² − 2Δtα²) + 2 (uuᵀ) ∘ A⁻¹ + 2G⁻¹`
    /// with `s = 2σ̄Δt`, `u = s ∘ α`.
    pub fn hessian(&self, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(sigma)?;
        let n = sigma.len();
        let sys = drift_system(&self.lkl, sigma.as_slice(), self.obs, self.lambda)?;
        let b = sys.factor.inverse();
        let ginv = self.g_inverse.get_or_init(|| self.g.inverse());
        let s: Vec<f64> = (0..n).map(|i| 2.0 * sigma[i] * self.obs.dt[i]).collect();
        let u: Vec<f64> = (0..n).map(|i| s[i] * sys.alpha[i]).collect();
        let mut h = DMatrix::from_fn(n, n, |i, j| {
            2.0 * u[i] * u[j] * b[(i, j)] + 2.0 * ginv[(i, j)]
        });
        for i in 0..n {
            let dt = self.obs.dt[i];
            let d = sys.d[i];
            h[(i, i)] += 2.0 * dt / d - s[i] * s[i] / (d * d) - 2.0 * dt * sys.alpha[i] * sys.alpha[i];
        }
        // The explicit inverses are symmetric only up to rounding.
        let ht = h.transpose();
        Ok((h + ht) * 0.5)
    }
}

/// Profile loss `L(f̄*(σ̄), σ̄)`.
pub fn sigma_profile_loss(sigma_bar: &[f64], obs: &ObservationSet, hp: &HyperParams) -> Result<f64> {
    ProfileObjective::new(obs, hp)?.value(&DVector::from_column_slice(sigma_bar))
}

/// Analytic gradient of [`sigma_profile_loss`].
pub fn sigma_profile_grad(
    sigma_bar: &[f64],
    obs: &ObservationSet,
    hp: &HyperParams,
) -> Result<Vec<f64>> {
    let (_, g) = ProfileObjective::new(obs, hp)?.value_grad(&DVector::from_column_slice(sigma_bar))?;
    Ok(g.as_slice().to_vec())
}

/// How the quadratic-variation initial guess is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitMode {
    /// `|Y_i| / √Δt_i`, an estimate of σ.
    #[default]
    SqrtQuadVar,
    /// `Y_i² / Δt_i`, an estimate of σ².
    LiteralQuadVar,
}

/// `G(G + γI)⁻¹v`, evaluated as `v − γ(G + γI)⁻¹v`; the identity when `γ = 0`.
fn gp_smooth(v: &[f64], obs: &ObservationSet, hp: &HyperParams) -> Result<Vec<f64>> {
    check_len(v, obs.len())?;
    if hp.gamma == 0.0 {
        return Ok(v.to_vec());
    }
    let mut g = gram(&hp.vol_kernel, &obs.x, &obs.x)?;
    for i in 0..g.nrows() {
        g[(i, i)] += hp.gamma;
    }
    let f = factor_spd(&g, &JitterPolicy::default())?;
    let v = DVector::from_column_slice(v);
    let w = f.solve_vec(&v)?;
    Ok((v - w * hp.gamma).as_slice().to_vec())
}

/// Smoothed quadratic-variation estimate. Entry `i` uses the increment
/// leaving `X_i`.
pub fn init_sigma(obs: &ObservationSet, hp: &HyperParams, mode: InitMode) -> Result<Vec<f64>> {
    let raw: Vec<f64> = obs
        .y
        .iter()
        .zip(&obs.dt)
        .map(|(y, dt)| match mode {
            InitMode::SqrtQuadVar => y.abs() / dt.sqrt(),
            InitMode::LiteralQuadVar => y * y / dt,
        })
        .collect();
    gp_smooth(&raw, obs, hp)
}

/// `σ̄* = G(X,X)(G(X,X) + γI)⁻¹σ̄†`.
pub fn smooth_sigma(sigma_dagger: &[f64], obs: &ObservationSet, hp: &HyperParams) -> Result<Vec<f64>> {
    gp_smooth(sigma_dagger, obs, hp)
}

/// `σ*(x) = G(x,X)(G(X,X) + γI)⁻¹σ̄†`.
pub fn sigma_posterior(
    x: &Points,
    sigma_dagger: &[f64],
    obs: &ObservationSet,
    hp: &HyperParams,
) -> Result<Vec<f64>> {
    check_len(sigma_dagger, obs.len())?;
    let mut g = gram(&hp.vol_kernel, &obs.x, &obs.x)?;
    for i in 0..g.nrows() {
        g[(i, i)] += hp.gamma;
    }
    let f = factor_spd(&g, &JitterPolicy::default())?;
    let w = f.solve_vec(&DVector::from_column_slice(sigma_dagger))?;
    let cross = gram(&hp.vol_kernel, x, &obs.x)?;
    Ok((cross * w).as_slice().to_vec())
}

/// Drift posterior mean at the training inputs when the increment noise of
/// one output dimension is the sum over several volatility columns,
/// `Σ = Σ_j diag((σ̄^j)² Δt)`.
pub fn coupled_drift(
    sigma_cols: &[Vec<f64>],
    obs: &ObservationSet,
    hp: &HyperParams,
) -> Result<Vec<f64>> {
    let total = total_sigma(sigma_cols, obs.len())?;
    drift_given_sigma(&total, obs, hp)
}

/// Joint volatility loss of one output dimension with `m` volatility columns:
/// `(Y−Λf)ᵀ(Σ+λI)⁻¹(Y−Λf) + Σ_k ln(Δt_k Σ_j (σ_kj)² + λ) + Σ_j σ_jᵀ G_j⁻¹ σ_j`.
///
/// `vol_kernels[j]` is the prior on column `j`.
pub fn coupled_sigma_loss(
    f: &[f64],
    sigma_cols: &[Vec<f64>],
    obs: &ObservationSet,
    vol_kernels: &[crate::kernels::KernelSpec],
    lambda: f64,
) -> Result<f64> {
    let n = obs.len();
    check_len(f, n)?;
    if vol_kernels.len() != sigma_cols.len() {
        return Err(Error::DimensionMismatch {
            expected: sigma_cols.len(),
            got: vol_kernels.len(),
        });
    }
    let total = total_sigma(sigma_cols, n)?;
    let d = noise_variances(&total, &obs.dt, lambda);
    let data: f64 = (0..n)
        .map(|i| {
            let r = obs.y[i] - obs.dt[i] * f[i];
            r * r / d[i]
        })
        .sum();
    let log_term: f64 = d.iter().map(|v| v.ln()).sum();
    let mut prior = 0.0;
    for (col, k) in sigma_cols.iter().zip(vol_kernels) {
        let g = factor_spd(&gram(k, &obs.x, &obs.x)?, &JitterPolicy::default())?;
        prior += quad_form(&g, &DVector::from_column_slice(col))?;
    }
    Ok(data + log_term + prior)
}

/// `√(Σ_j σ_kj²)`, the single-column volatility with the same noise variance.
fn total_sigma(cols: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    if cols.is_empty() {
        return Err(Error::EmptyInput("volatility columns"));
    }
    for c in cols {
        check_len(c, n)?;
    }
    Ok((0..n)
        .map(|k| cols.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt())
        .collect())
}
