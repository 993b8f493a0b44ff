//! C ABI over `sde-recover`.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every fallible call returns an [`SdrStatus`]; on failure the
//! message is available from [`sdr_last_error`] on the same thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sde_recover::estimator::{fit, FitResult, Optimizer};
use sde_recover::kernels::{HyperParams, KernelFamily};
use sde_recover::simulate::{euler_maruyama, to_observations, ProcessSpec, Trajectory};
use sde_recover::{Error, Points};

/// Status codes. The numeric values match the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonFiniteState = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrProcess {
    /// `p1 = μ`, `p2 = b`.
    ExpDecayVol = 0,
    /// `p1 = k`, `p2 = b`.
    Trigonometric = 1,
    /// `p1 = μ`, `p2 = σ`.
    Gbm = 2,
    /// `p1 = θ`, `p2 = σ`.
    Ou = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrKernel {
    Matern52 = 0,
    Linear = 1,
    WhiteNoise = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrOptimizer {
    NormBoundedGd = 0,
    NewtonArmijo = 1,
}

/// A scalar sample path.
pub struct SdrTrajectory(Trajectory);

/// A fitted drift and volatility model.
pub struct SdrFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SdrStatus {
    match e {
        Error::NonFiniteState { .. } => SdrStatus::NonFiniteState,
        Error::NonFiniteLoss { .. }
        | Error::FactorizationFailed { .. }
        | Error::NonFiniteMatrix
        | Error::NotSymmetric { .. } => SdrStatus::Numerical,
        _ => SdrStatus::InvalidArgument,
    }
}

struct Fail(SdrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SdrStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, translating errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SdrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SdrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SdrStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` is null only if `len == 0`; otherwise it points to `len` readable doubles.
unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// As for [`slice`], with `len` writable doubles.
unsafe fn write_out(src: &[f64], out: *mut f64, cap: usize, what: &str) -> Result<(), Fail> {
    if cap < src.len() {
        return Err(Fail(
            SdrStatus::InvalidArgument,
            format!("{what} needs capacity {}, got {cap}", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn set_handle<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    // SAFETY: checked non-null; the caller supplies a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message for the most recent failure on this thread, or null.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sdr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Euler–Maruyama path with `n_steps + 1` samples.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sdr_simulate(
    process: SdrProcess,
    p1: f64,
    p2: f64,
    x0: f64,
    dt: f64,
    n_steps: usize,
    seed: u64,
    out: *mut *mut SdrTrajectory,
) -> SdrStatus {
    guard(|| {
        let spec = match process {
            SdrProcess::ExpDecayVol => ProcessSpec::ExpDecayVol { mu: p1, b: p2 },
            SdrProcess::Trigonometric => ProcessSpec::Trigonometric { k_freq: p1, b: p2 },
            SdrProcess::Gbm => ProcessSpec::Gbm { mu: p1, sigma: p2 },
            SdrProcess::Ou => ProcessSpec::Ou { theta: p1, sigma: p2 },
        };
        let traj = euler_maruyama(&spec, x0, dt, n_steps, seed)?;
        set_handle(out, SdrTrajectory(traj))
    })
}

/// Wraps observed samples. `times` must be strictly increasing.
///
/// # Safety
/// `times` and `values` point to `len` doubles each; `out` is a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sdr_trajectory_from_samples(
    times: *const f64,
    values: *const f64,
    len: usize,
    out: *mut *mut SdrTrajectory,
) -> SdrStatus {
    guard(|| {
        let t = slice(times, len, "times")?.to_vec();
        let v = slice(values, len, "values")?.to_vec();
        if t.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Fail(SdrStatus::InvalidArgument, "samples must be finite".into()));
        }
        let traj = Trajectory::new(t, Points::from_scalars(v), 0)?;
        set_handle(out, SdrTrajectory(traj))
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `traj` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdr_trajectory_len(traj: *const SdrTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Copies times and values into buffers of at least `sdr_trajectory_len` doubles.
/// Either output may be null to skip it.
///
/// # Safety
/// `traj` is a live handle; non-null outputs hold `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sdr_trajectory_read(
    traj: *const SdrTrajectory,
    times_out: *mut f64,
    values_out: *mut f64,
    cap: usize,
) -> SdrStatus {
    guard(|| {
        let t = &traj.as_ref().ok_or_else(|| null("trajectory"))?.0;
        if !times_out.is_null() {
            write_out(&t.times, times_out, cap, "times_out")?;
        }
        if !values_out.is_null() {
            write_out(t.values.as_flat(), values_out, cap, "values_out")?;
        }
        Ok(())
    })
}

/// # Safety
/// `traj` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdr_trajectory_free(traj: *mut SdrTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

fn family(k: SdrKernel) -> KernelFamily {
    match k {
        SdrKernel::Matern52 => KernelFamily::Matern52,
        SdrKernel::Linear => KernelFamily::Linear,
        SdrKernel::WhiteNoise => KernelFamily::WhiteNoise,
    }
}

/// MAP fit with default hyperparameters for the chosen kernel families.
///
/// # Safety
/// `traj` is a live handle; `out` is a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit(
    traj: *const SdrTrajectory,
    drift_kernel: SdrKernel,
    vol_kernel: SdrKernel,
    optimizer: SdrOptimizer,
    out: *mut *mut SdrFit,
) -> SdrStatus {
    guard(|| {
        let t = &traj.as_ref().ok_or_else(|| null("trajectory"))?.0;
        let obs = to_observations(t)?;
        let hp = HyperParams::defaults(&obs.x, family(drift_kernel), family(vol_kernel), obs.mean_dt())?;
        let opt = match optimizer {
            SdrOptimizer::NormBoundedGd => Optimizer::NormBoundedGD,
            SdrOptimizer::NewtonArmijo => Optimizer::NewtonArmijo,
        };
        let result = fit(&obs, &sde_recover::estimator::FitConfig::new(hp).with_optimizer(opt))?;
        set_handle(out, SdrFit(result))
    })
}

/// Number of training inputs, or 0 for a null handle.
///
/// # Safety
/// `fit` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_len(fit: *const SdrFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.f_bar.len())
}

/// Final profile loss, NaN for a null handle.
///
/// # Safety
/// `fit` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_final_loss(fit: *const SdrFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.final_loss)
}

/// Copies drift and smoothed volatility at the training inputs.
/// Either output may be null to skip it.
///
/// # Safety
/// `fit` is a live handle; non-null outputs hold `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_read(
    fit: *const SdrFit,
    f_out: *mut f64,
    sigma_out: *mut f64,
    cap: usize,
) -> SdrStatus {
    guard(|| {
        let r = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        if !f_out.is_null() {
            write_out(&r.f_bar, f_out, cap, "f_out")?;
        }
        if !sigma_out.is_null() {
            write_out(&r.sigma_bar, sigma_out, cap, "sigma_out")?;
        }
        Ok(())
    })
}

/// Drift mean and volatility at `n` query points.
/// Either output may be null to skip it.
///
/// # Safety
/// `x` holds `n` doubles; non-null outputs hold `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_predict(
    fit: *const SdrFit,
    x: *const f64,
    n: usize,
    f_out: *mut f64,
    sigma_out: *mut f64,
) -> SdrStatus {
    guard(|| {
        let r = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        let q = slice(x, n, "x")?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Fail(SdrStatus::InvalidArgument, "query points must be finite".into()));
        }
        let q = Points::from_scalars(q.to_vec());
        if !f_out.is_null() {
            write_out(&r.predict_drift(&q)?.mean, f_out, n, "f_out")?;
        }
        if !sigma_out.is_null() {
            write_out(&r.predict_sigma(&q)?, sigma_out, n, "sigma_out")?;
        }
        Ok(())
    })
}

/// # Safety
/// `fit` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_free(fit: *mut SdrFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
