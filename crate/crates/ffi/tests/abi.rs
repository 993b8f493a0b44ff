use std::ffi::CStr;
use std::ptr;

use sde_recover_ffi::*;

fn last_error() -> String {
    let p = sdr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulate(process: SdrProcess, p1: f64, p2: f64, x0: f64, dt: f64, n: usize, seed: u64) -> *mut SdrTrajectory {
    let mut t = ptr::null_mut();
    let s = unsafe { sdr_simulate(process, p1, p2, x0, dt, n, seed, &mut t) };
    assert_eq!(s, SdrStatus::Ok);
    assert!(!t.is_null());
    t
}

fn read(t: *const SdrTrajectory) -> (Vec<f64>, Vec<f64>) {
    let n = unsafe { sdr_trajectory_len(t) };
    let mut times = vec![0.0; n];
    let mut values = vec![0.0; n];
    let s = unsafe { sdr_trajectory_read(t, times.as_mut_ptr(), values.as_mut_ptr(), n) };
    assert_eq!(s, SdrStatus::Ok);
    (times, values)
}

#[test]
fn simulate_matches_core_and_is_reproducible() {
    let a = simulate(SdrProcess::Ou, 5.0, 1.0, 1.0, 0.001, 50, 7);
    let b = simulate(SdrProcess::Ou, 5.0, 1.0, 1.0, 0.001, 50, 7);
    let (ta, va) = read(a);
    let (_, vb) = read(b);
    assert_eq!(ta.len(), 51);
    assert_eq!(va, vb);

    let core = sde_recover::simulate::euler_maruyama(
        &sde_recover::simulate::ProcessSpec::Ou { theta: 5.0, sigma: 1.0 },
        1.0,
        0.001,
        50,
        7,
    )
    .unwrap();
    assert_eq!(va, core.values.as_flat());
    assert_eq!(ta, core.times);
    unsafe {
        sdr_trajectory_free(a);
        sdr_trajectory_free(b);
    }
}

#[test]
fn fit_and_predict_round_trip() {
    let t = simulate(SdrProcess::ExpDecayVol, 5.0, 1.0, 0.0, 0.01, 60, 3);
    let mut f = ptr::null_mut();
    let s = unsafe { sdr_fit(t, SdrKernel::Matern52, SdrKernel::Matern52, SdrOptimizer::NewtonArmijo, &mut f) };
    assert_eq!(s, SdrStatus::Ok);
    let n = unsafe { sdr_fit_len(f) };
    assert_eq!(n, 60);
    assert!(unsafe { sdr_fit_final_loss(f) }.is_finite());

    let mut drift = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    assert_eq!(unsafe { sdr_fit_read(f, drift.as_mut_ptr(), sigma.as_mut_ptr(), n) }, SdrStatus::Ok);
    assert!(sigma.iter().all(|v| v.is_finite()));

    let (_, values) = read(t);
    let mut pf = vec![0.0; n];
    let mut ps = vec![0.0; n];
    let s = unsafe { sdr_fit_predict(f, values.as_ptr(), n, pf.as_mut_ptr(), ps.as_mut_ptr()) };
    assert_eq!(s, SdrStatus::Ok);
    assert!(pf.iter().chain(&ps).all(|v| v.is_finite()));

    // Only the volatility output requested.
    let s = unsafe { sdr_fit_predict(f, values.as_ptr(), 3, ptr::null_mut(), ps.as_mut_ptr()) };
    assert_eq!(s, SdrStatus::Ok);
    unsafe {
        sdr_fit_free(f);
        sdr_trajectory_free(t);
    }
}

#[test]
fn from_samples_validates_input() {
    let times = [0.0, 0.1, 0.2];
    let values = [1.0, 1.1, 0.9];
    let mut t = ptr::null_mut();
    let s = unsafe { sdr_trajectory_from_samples(times.as_ptr(), values.as_ptr(), 3, &mut t) };
    assert_eq!(s, SdrStatus::Ok);
    assert_eq!(read(t), (times.to_vec(), values.to_vec()));
    unsafe { sdr_trajectory_free(t) };

    let bad_times = [0.0, 0.2, 0.1];
    let mut t = ptr::null_mut();
    let s = unsafe { sdr_trajectory_from_samples(bad_times.as_ptr(), values.as_ptr(), 3, &mut t) };
    assert_eq!(s, SdrStatus::InvalidArgument);
    assert!(t.is_null());
    assert!(last_error().contains("increasing"));

    let nan = [1.0, f64::NAN, 0.9];
    let s = unsafe { sdr_trajectory_from_samples(times.as_ptr(), nan.as_ptr(), 3, &mut t) };
    assert_eq!(s, SdrStatus::InvalidArgument);
}

#[test]
fn error_codes() {
    let mut t = ptr::null_mut();
    let s = unsafe { sdr_simulate(SdrProcess::Gbm, 1e100, 1.0, 1.0, 1.0, 10, 0, &mut t) };
    assert_eq!(s, SdrStatus::NonFiniteState);
    assert!(last_error().contains("non-finite"));

    let s = unsafe { sdr_simulate(SdrProcess::Ou, 1.0, 1.0, 0.0, -1.0, 10, 0, &mut t) };
    assert_eq!(s, SdrStatus::InvalidArgument);

    let s = unsafe { sdr_simulate(SdrProcess::Ou, 1.0, 1.0, 0.0, 0.1, 10, 0, ptr::null_mut()) };
    assert_eq!(s, SdrStatus::NullPointer);

    let mut f = ptr::null_mut();
    let s = unsafe { sdr_fit(ptr::null(), SdrKernel::Linear, SdrKernel::Linear, SdrOptimizer::NormBoundedGd, &mut f) };
    assert_eq!(s, SdrStatus::NullPointer);

    let t = simulate(SdrProcess::Ou, 5.0, 1.0, 1.0, 0.01, 20, 1);
    let mut small = [0.0; 4];
    let s = unsafe { sdr_trajectory_read(t, small.as_mut_ptr(), ptr::null_mut(), 4) };
    assert_eq!(s, SdrStatus::InvalidArgument);
    assert!(last_error().contains("capacity"));

    // A success clears the previous message.
    let s = unsafe { sdr_trajectory_read(t, ptr::null_mut(), ptr::null_mut(), 0) };
    assert_eq!(s, SdrStatus::Ok);
    assert!(sdr_last_error().is_null());

    assert_eq!(unsafe { sdr_trajectory_len(ptr::null()) }, 0);
    assert!(unsafe { sdr_fit_final_loss(ptr::null()) }.is_nan());
    unsafe {
        sdr_trajectory_free(t);
        sdr_trajectory_free(ptr::null_mut());
        sdr_fit_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sde_recover.h")).unwrap();
    for name in [
        "sdr_last_error",
        "sdr_simulate",
        "sdr_trajectory_from_samples",
        "sdr_trajectory_len",
        "sdr_trajectory_read",
        "sdr_trajectory_free",
        "sdr_fit",
        "sdr_fit_len",
        "sdr_fit_final_loss",
        "sdr_fit_read",
        "sdr_fit_predict",
        "sdr_fit_free",
        "typedef struct SdrTrajectory SdrTrajectory",
        "typedef struct SdrFit SdrFit",
        "SDR_STATUS_NON_FINITE_STATE = 3",
    ] {
        assert!(header.contains(name), "header is missing {name}");
    }
}
