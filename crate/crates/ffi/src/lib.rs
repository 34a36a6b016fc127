//! C ABI over `slmc-core`.
//!
//! Every fallible function returns an [`SlmcStatus`]; on failure the message
//! is available from [`slmc_last_error_message`] on the same thread. Models
//! and trajectories are opaque handles released with their `_free` function.
//! Strings returned by the library are released with [`slmc_string_free`].
//! Panics never cross the boundary; they surface as `SLMC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use slmc::harness::ModelSpec;
use slmc::potential::{PotentialModel, Target};
use slmc::sampler::{default_alpha, run_full_lmc, run_slmc, SamplerConfig, Trajectory};
use slmc::theory::{theory_report, TheoryInputs};
use slmc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    InvalidConfig = 4,
    HypothesisViolation = 5,
    Divergence = 6,
    NonConvergence = 7,
    NumericalFailure = 8,
    BufferTooSmall = 9,
    OutOfRange = 10,
    Io = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(s).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> SlmcStatus {
    match err {
        Error::InvalidInput(_) | Error::DegenerateInput(_) => SlmcStatus::InvalidInput,
        Error::Validation(_) | Error::Config(_) | Error::Json(_) => SlmcStatus::InvalidConfig,
        Error::HypothesisViolation(_) => SlmcStatus::HypothesisViolation,
        Error::Divergence { .. } => SlmcStatus::Divergence,
        Error::NonConvergence { .. } => SlmcStatus::NonConvergence,
        Error::Io { .. } | Error::Csv(_) => SlmcStatus::Io,
        Error::Check { source, .. } => status_of(source),
        _ => SlmcStatus::NumericalFailure,
    }
}

fn fail(status: SlmcStatus, msg: impl Into<String>) -> SlmcStatus {
    set_error(msg);
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SlmcStatus>) -> SlmcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlmcStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SlmcStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: slmc::Result<T>) -> Result<T, SlmcStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SlmcStatus> {
    if p.is_null() {
        return Err(fail(SlmcStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SlmcStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], SlmcStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SlmcStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, SlmcStatus> {
    p.as_mut()
        .ok_or_else(|| fail(SlmcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, SlmcStatus> {
    p.as_ref()
        .ok_or_else(|| fail(SlmcStatus::NullPointer, format!("{name} is null")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn slmc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn slmc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A statistical model: observations, prior and likelihood.
pub struct SlmcModel {
    inner: PotentialModel,
}

/// A recorded single-replica path.
pub struct SlmcTrajectory {
    inner: Trajectory,
    dim: usize,
}

/// Builds a model from a JSON model spec, e.g.
/// `{"prior": {"kind": "gaussian", "mean": [0], "variance": 1},
///   "likelihood": {"kind": "gaussian", "noise_variance": 1},
///   "observations": {"points": [[0.5], [1.5]]}}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_model_from_json(
    json: *const c_char,
    out: *mut *mut SlmcModel,
) -> SlmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let text = str_arg(json, "json")?;
        let spec: ModelSpec = lift(serde_json::from_str(text).map_err(Error::from))?;
        let inner = lift(spec.build())?;
        *out = Box::into_raw(Box::new(SlmcModel { inner }));
        Ok(())
    })
}

/// Releases a model.
///
/// # Safety
/// `model` must be null or a live handle from [`slmc_model_from_json`].
#[no_mangle]
pub unsafe extern "C" fn slmc_model_free(model: *mut SlmcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of observations and parameter dimension.
///
/// # Safety
/// `model` must be a live handle; `n` and `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_model_shape(
    model: *const SlmcModel,
    n: *mut usize,
    dim: *mut usize,
) -> SlmcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        *out_arg(n, "n")? = m.inner.n();
        *out_arg(dim, "dim")? = m.inner.dim();
        Ok(())
    })
}

/// Maps a C observation index to a target: a negative index selects the
/// mean potential.
fn target(m: &PotentialModel, index: i64) -> Result<Target, SlmcStatus> {
    if index < 0 {
        return Ok(Target::Mean);
    }
    let i = index as usize;
    if i >= m.n() {
        return Err(fail(
            SlmcStatus::OutOfRange,
            format!("observation index {i} out of range 0..{}", m.n()),
        ));
    }
    Ok(Target::Observation(i))
}

/// `U_{X_i}(θ)`, or `U_{ν_n}(θ)` when `index < 0`.
///
/// # Safety
/// `theta` must point to `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_model_eval(
    model: *const SlmcModel,
    index: i64,
    theta: *const f64,
    dim: usize,
    out: *mut f64,
) -> SlmcStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let th = slice_arg(theta, dim, "theta")?;
        let v = match target(m, index)? {
            Target::Observation(i) => lift(m.eval_potential(i, th))?,
            Target::Mean => lift(m.eval_mean_potential(th))?,
        };
        *out_arg(out, "out")? = v;
        Ok(())
    })
}

/// Gradient of `U_{X_i}` (or `U_{ν_n}` when `index < 0`) written to
/// `out[0..dim]`.
///
/// # Safety
/// `theta` must point to `dim` doubles and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn slmc_model_grad(
    model: *const SlmcModel,
    index: i64,
    theta: *const f64,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> SlmcStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let th = slice_arg(theta, dim, "theta")?;
        let g = match target(m, index)? {
            Target::Observation(i) => lift(m.grad_potential(i, th))?,
            Target::Mean => lift(m.grad_mean_potential(th))?,
        };
        if out_len < g.len() {
            return Err(fail(
                SlmcStatus::BufferTooSmall,
                format!("gradient needs {} doubles, buffer holds {out_len}", g.len()),
            ));
        }
        if out.is_null() {
            return Err(fail(SlmcStatus::NullPointer, "out is null"));
        }
        std::slice::from_raw_parts_mut(out, g.len()).copy_from_slice(&g);
        Ok(())
    })
}

/// Smallest Hessian eigenvalue of `U_{X_i}` (or `U_{ν_n}` when `index < 0`).
///
/// # Safety
/// `theta` must point to `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_model_hessian_min_eig(
    model: *const SlmcModel,
    index: i64,
    theta: *const f64,
    dim: usize,
    out: *mut f64,
) -> SlmcStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let th = slice_arg(theta, dim, "theta")?;
        let t = target(m, index)?;
        *out_arg(out, "out")? = lift(m.hessian_min_eig(t, th))?;
        Ok(())
    })
}

/// Sampler choice for [`slmc_run`], passed as an `int32_t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlmcSampler {
    Subsampled = 0,
    FullGradient = 1,
}

/// Runs one replica and records it at `record_times`. `sampler` is an
/// [`SlmcSampler`] value. `config_json` is a sampler config such as
/// `{"alpha_n": 1, "h": 0.001, "horizon": 1, "sigma2": 0.1, "seed": 7}`.
///
/// # Safety
/// `record_times` must point to `count` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_run(
    model: *const SlmcModel,
    config_json: *const c_char,
    sampler: i32,
    record_times: *const f64,
    count: usize,
    out: *mut *mut SlmcTrajectory,
) -> SlmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let m = &handle(model, "model")?.inner;
        let text = str_arg(config_json, "config_json")?;
        let cfg: SamplerConfig = lift(serde_json::from_str(text).map_err(Error::from))?;
        let times = slice_arg(record_times, count, "record_times")?;
        let traj = match sampler {
            s if s == SlmcSampler::Subsampled as i32 => lift(run_slmc(m, &cfg, times))?,
            s if s == SlmcSampler::FullGradient as i32 => lift(run_full_lmc(m, &cfg, times))?,
            other => {
                return Err(fail(
                    SlmcStatus::InvalidInput,
                    format!("unknown sampler {other}"),
                ))
            }
        };
        *out = Box::into_raw(Box::new(SlmcTrajectory {
            inner: traj,
            dim: m.dim(),
        }));
        Ok(())
    })
}

/// Releases a trajectory.
///
/// # Safety
/// `traj` must be null or a live handle from [`slmc_run`].
#[no_mangle]
pub unsafe extern "C" fn slmc_trajectory_free(traj: *mut SlmcTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of records, parameter dimension, gradient evaluations and steps.
///
/// # Safety
/// `traj` must be a live handle; every output pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_trajectory_info(
    traj: *const SlmcTrajectory,
    records: *mut usize,
    dim: *mut usize,
    gradient_evals: *mut u64,
    steps: *mut u64,
) -> SlmcStatus {
    guard(|| {
        let t = handle(traj, "traj")?;
        *out_arg(records, "records")? = t.inner.times.len();
        *out_arg(dim, "dim")? = t.dim;
        *out_arg(gradient_evals, "gradient_evals")? = t.inner.gradient_evals;
        *out_arg(steps, "steps")? = t.inner.steps;
        Ok(())
    })
}

/// Record `k`: its time, `θ` (written to `theta[0..dim]`) and the active
/// observation index.
///
/// # Safety
/// `traj` must be a live handle; `theta` must hold `theta_len` doubles;
/// `time` and `active_obs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_trajectory_record(
    traj: *const SlmcTrajectory,
    k: usize,
    time: *mut f64,
    theta: *mut f64,
    theta_len: usize,
    active_obs: *mut usize,
) -> SlmcStatus {
    guard(|| {
        let t = handle(traj, "traj")?;
        if k >= t.inner.times.len() {
            return Err(fail(
                SlmcStatus::OutOfRange,
                format!("record {k} out of range 0..{}", t.inner.times.len()),
            ));
        }
        if theta_len < t.dim {
            return Err(fail(
                SlmcStatus::BufferTooSmall,
                format!("theta needs {} doubles, buffer holds {theta_len}", t.dim),
            ));
        }
        if theta.is_null() {
            return Err(fail(SlmcStatus::NullPointer, "theta is null"));
        }
        *out_arg(time, "time")? = t.inner.times[k];
        *out_arg(active_obs, "active_obs")? = t.inner.active_obs_seq[k];
        std::slice::from_raw_parts_mut(theta, t.dim).copy_from_slice(&t.inner.thetas[k]);
        Ok(())
    })
}

/// Default jump intensity `1/(n (d ln²n)^{1+r})`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_default_alpha(
    n: usize,
    d: usize,
    r: f64,
    out: *mut f64,
) -> SlmcStatus {
    guard(|| {
        *out_arg(out, "out")? = lift(default_alpha(n, d, r))?;
        Ok(())
    })
}

/// Every theory bound as a JSON object. `inputs_json` holds at least
/// `{"n": .., "d": .., "r": ..}`. The result must be released with
/// [`slmc_string_free`].
///
/// # Safety
/// `inputs_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slmc_theory_report_json(
    inputs_json: *const c_char,
    eps: f64,
    out: *mut *mut c_char,
) -> SlmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let text = str_arg(inputs_json, "inputs_json")?;
        let inputs: TheoryInputs = lift(serde_json::from_str(text).map_err(Error::from))?;
        let rep = lift(theory_report(&inputs, eps))?;
        let json = lift(serde_json::to_string(&rep).map_err(Error::from))?;
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}
