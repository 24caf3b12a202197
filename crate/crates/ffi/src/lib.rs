//! C interface to the hybrid IAS solvers.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every function returns an [`IasStatus`]; on a
//! non-zero status the message is available from [`ias_last_error`] on the
//! same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ias_core::config::ExperimentConfig;
use ias_core::experiment::{run_experiment, solve, RunOutcome};
use ias_core::hyperprior::HyperModel;
use ias_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Solver = 5,
    Panic = 6,
}

/// Vectors a finished run exposes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IasField {
    /// Reconstructed signal or image (row-major).
    Signal = 0,
    /// Sparse coefficients.
    Coefficients = 1,
    /// Prior variances.
    Theta = 2,
}

/// Opaque experiment configuration.
pub struct IasConfig(ExperimentConfig);

/// Opaque finished run.
pub struct IasRun(RunOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|b| *b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(IasStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config { .. } => IasStatus::Config,
            Error::Io(_) | Error::MissingArtifact(_) => IasStatus::Io,
            Error::InvalidModel(_) | Error::Domain(_) | Error::Dimension(_) => IasStatus::InvalidArgument,
            _ => IasStatus::Solver,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IasStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IasStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IasStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(IasStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Last error message of this thread, or an empty string. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ias_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ias_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ias_config_from_preset(name: *const c_char, out: *mut *mut IasConfig) -> IasStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ExperimentConfig::preset(text(name, "name")?)?;
        store(out, IasConfig(cfg));
        Ok(())
    })
}

/// Parses `key = value` configuration text.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ias_config_parse(source: *const c_char, out: *mut *mut IasConfig) -> IasStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ExperimentConfig::parse(text(source, "source")?)?;
        store(out, IasConfig(cfg));
        Ok(())
    })
}

/// Applies one `key=value` override.
///
/// # Safety
/// `cfg` must be a live handle and `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ias_config_set(cfg: *mut IasConfig, assignment: *const c_char) -> IasStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.0.apply_override(text(assignment, "assignment")?)?;
        Ok(())
    })
}

/// Writes the resolved configuration as text; release it with
/// [`ias_string_free`].
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ias_config_serialize(cfg: *const IasConfig, out: *mut *mut c_char) -> IasStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CString::new(cfg.0.serialize())
            .map_err(|_| Failure(IasStatus::Config, "configuration contains a NUL byte".into()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ias_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `cfg` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ias_config_free(cfg: *mut IasConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds and solves the experiment in memory.
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ias_solve(cfg: *const IasConfig, out: *mut *mut IasRun) -> IasStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, IasRun(solve(&cfg.0)?));
        Ok(())
    })
}

/// Solves the experiment and writes its artifacts into `dir`.
///
/// # Safety
/// `cfg` must be a live handle, `dir` a NUL-terminated path and `out` a
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ias_run_experiment(
    cfg: *const IasConfig,
    dir: *const c_char,
    out: *mut *mut IasRun,
) -> IasStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let dir = text(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, IasRun(run_experiment(&cfg.0, Path::new(dir))?));
        Ok(())
    })
}

fn field(run: &IasRun, f: IasField) -> &[f64] {
    let s = &run.0.result.state;
    match f {
        IasField::Signal => &s.signal,
        IasField::Coefficients => &s.x,
        IasField::Theta => &s.theta,
    }
}

/// Length of a run vector, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ias_run_len(run: *const IasRun, f: IasField) -> usize {
    run.as_ref().map_or(0, |r| field(r, f).len())
}

/// Copies a run vector into `buf`, which must hold at least
/// [`ias_run_len`] values.
///
/// # Safety
/// `run` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ias_run_copy(run: *const IasRun, f: IasField, buf: *mut f64, len: usize) -> IasStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = field(run, f);
        if len < v.len() {
            return Err(Failure(IasStatus::InvalidArgument, format!("buffer holds {len} values, need {}", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Completed outer iterations, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ias_run_iterations(run: *const IasRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.result.state.t)
}

/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ias_run_converged(run: *const IasRun) -> bool {
    run.as_ref().is_some_and(|r| r.0.result.converged)
}

/// Relative reconstruction error, or NaN when no ground truth is known.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ias_run_relative_error(run: *const IasRun) -> f64 {
    run.as_ref().and_then(|r| r.0.metrics.relative_error).unwrap_or(f64::NAN)
}

/// # Safety
/// `run` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ias_run_free(run: *mut IasRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Closed-form θ-update of a single component for the generalized gamma
/// hyperprior with shape `r`, `eta` and scale `vartheta`.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ias_theta_update(r: f64, eta: f64, vartheta: f64, x: f64, out: *mut f64) -> IasStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = HyperModel::from_eta(r, eta, vec![vartheta])?;
        *out = model.theta_update(x, 0)?;
        Ok(())
    })
}
