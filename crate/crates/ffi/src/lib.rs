//! C ABI over the `lagrange_net` experiment harness.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Every fallible call returns an [`LnStatus`];
//! on failure [`ln_last_error_message`] describes the error for the calling
//! thread. Strings returned through out-parameters must be released with
//! [`ln_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lagrange_net::harness::{self, ExperimentConfig, ExperimentResult};
use lagrange_net::solvers::Status;
use lagrange_net::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LnStatus {
    Ok = 0,
    /// Configuration could not be parsed or validated.
    ConfigError = 2,
    /// Oracle, certification or solver failure.
    RuntimeError = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    /// Output buffer is shorter than the data; the required length is still reported.
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Terminal state of a solver run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LnRunStatus {
    Converged = 0,
    IterationCap = 1,
    Diverged = 2,
}

/// Parsed experiment configuration.
pub struct LnExperiment {
    config: ExperimentConfig,
}

/// Completed solver run.
pub struct LnRun {
    result: ExperimentResult,
}

/// Problem dimensions of an experiment.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LnDims {
    pub dim: usize,
    pub num_agents: usize,
    pub num_constraints: usize,
    pub num_pairs: usize,
    /// Length of the stacked primal vector.
    pub x_len: usize,
    /// Length of the consensus multiplier vector.
    pub lambda_len: usize,
}

/// KKT residual components.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LnKkt {
    pub stationarity: f64,
    pub constraint: f64,
    pub consensus: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &Error) -> LnStatus {
    match harness::exit_code(err) {
        harness::EXIT_USAGE => LnStatus::ConfigError,
        _ => LnStatus::RuntimeError,
    }
}

/// Runs `body` with panic capture and last-error bookkeeping.
fn guard(body: impl FnOnce() -> Result<(), LnStatus>) -> LnStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LnStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            LnStatus::Panic
        }
    }
}

fn fail(err: Error) -> LnStatus {
    let status = status_of(&err);
    set_last_error(err.to_string());
    status
}

fn null(what: &str) -> LnStatus {
    set_last_error(format!("{what} is null"));
    LnStatus::NullPointer
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, LnStatus> {
    ptr.as_ref().ok_or_else(|| null(what))
}

fn json_out<T: serde::Serialize>(value: &T, out: *mut *mut c_char) -> Result<(), LnStatus> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(e.into()))?;
    let text = CString::new(text).map_err(|_| {
        set_last_error("JSON contained an interior NUL".into());
        LnStatus::RuntimeError
    })?;
    unsafe { *out = text.into_raw() };
    Ok(())
}

fn copy_out(data: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> Result<(), LnStatus> {
    if !written.is_null() {
        unsafe { *written = data.len() };
    }
    if len < data.len() {
        set_last_error(format!("buffer holds {len} values, {} needed", data.len()));
        return Err(LnStatus::BufferTooSmall);
    }
    if data.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    unsafe { ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len()) };
    Ok(())
}

/// Message for the most recent failure on this thread, or null. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn ln_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ln_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ln_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML experiment configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_experiment_from_toml(toml: *const c_char, out: *mut *mut LnExperiment) -> LnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml).to_str().map_err(|_| {
            set_last_error("config is not valid UTF-8".into());
            LnStatus::InvalidUtf8
        })?;
        let config = ExperimentConfig::from_toml_str(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(LnExperiment { config }));
        Ok(())
    })
}

/// Releases an experiment. Null is ignored.
///
/// # Safety
/// `exp` must come from [`ln_experiment_from_toml`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ln_experiment_free(exp: *mut LnExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// # Safety
/// `exp` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_experiment_dims(exp: *const LnExperiment, out: *mut LnDims) -> LnStatus {
    guard(|| {
        let exp = borrow(exp, "experiment")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = &exp.config.problem;
        *out = LnDims {
            dim: p.dim(),
            num_agents: p.num_agents(),
            num_constraints: p.num_constraints(),
            num_pairs: p.num_pairs(),
            x_len: p.x_len(),
            lambda_len: p.lambda_len(),
        };
        Ok(())
    })
}

/// Runs the solver in memory. A run that does not converge still returns `Ok`; inspect [`ln_run_status`].
///
/// # Safety
/// `exp` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_experiment_run(exp: *const LnExperiment, out: *mut *mut LnRun) -> LnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let exp = borrow(exp, "experiment")?;
        let result = harness::execute(&exp.config).map_err(fail)?;
        *out = Box::into_raw(Box::new(LnRun { result }));
        Ok(())
    })
}

/// Writes the oracle report as JSON into `*out`.
///
/// # Safety
/// `exp` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_experiment_oracle_json(exp: *const LnExperiment, out: *mut *mut c_char) -> LnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let exp = borrow(exp, "experiment")?;
        let prepared = harness::prepare(&exp.config).map_err(fail)?;
        json_out(&harness::oracle_report(&exp.config, &prepared), out)
    })
}

/// Writes the spectral certificate as JSON into `*out`.
///
/// # Safety
/// `exp` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_experiment_certificate_json(exp: *const LnExperiment, out: *mut *mut c_char) -> LnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let exp = borrow(exp, "experiment")?;
        let prepared = harness::prepare(&exp.config).map_err(fail)?;
        let cert = harness::certify(&exp.config, &prepared).map_err(fail)?;
        json_out(&cert, out)
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must come from [`ln_experiment_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ln_run_free(run: *mut LnRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_run_status(run: *const LnRun, out: *mut LnRunStatus) -> LnStatus {
    guard(|| {
        let run = borrow(run, "run")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = match run.result.summary.status {
            Status::Converged => LnRunStatus::Converged,
            Status::IterationCap => LnRunStatus::IterationCap,
            Status::Diverged => LnRunStatus::Diverged,
        };
        Ok(())
    })
}

/// Iterations performed (outer iterations for the method of multipliers).
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_run_iterations(run: *const LnRun, out: *mut usize) -> LnStatus {
    guard(|| {
        let run = borrow(run, "run")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = run.result.summary.iterations;
        Ok(())
    })
}

/// KKT residual of the final iterate.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_run_kkt_residual(run: *const LnRun, out: *mut LnKkt) -> LnStatus {
    guard(|| {
        let run = borrow(run, "run")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let k = run.result.summary.final_kkt;
        *out = LnKkt {
            stationarity: k.stationarity,
            constraint: k.constraint,
            consensus: k.consensus,
        };
        Ok(())
    })
}

/// Copies the final stacked primal iterate into `buf`. `*written` receives the
/// full length even when the buffer is too small.
///
/// # Safety
/// `run` must be a live run handle; `buf` must hold `len` doubles; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ln_run_final_x(run: *const LnRun, buf: *mut f64, len: usize, written: *mut usize) -> LnStatus {
    guard(|| copy_out(borrow(run, "run")?.result.final_state.x.as_slice(), buf, len, written))
}

/// Copies the final constraint multipliers into `buf`.
///
/// # Safety
/// As [`ln_run_final_x`].
#[no_mangle]
pub unsafe extern "C" fn ln_run_final_mu(run: *const LnRun, buf: *mut f64, len: usize, written: *mut usize) -> LnStatus {
    guard(|| copy_out(borrow(run, "run")?.result.final_state.mu.as_slice(), buf, len, written))
}

/// Copies the final consensus multipliers into `buf`.
///
/// # Safety
/// As [`ln_run_final_x`].
#[no_mangle]
pub unsafe extern "C" fn ln_run_final_lambda(run: *const LnRun, buf: *mut f64, len: usize, written: *mut usize) -> LnStatus {
    guard(|| copy_out(borrow(run, "run")?.result.final_state.lambda.as_slice(), buf, len, written))
}

/// Writes the run summary as JSON into `*out`.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ln_run_summary_json(run: *const LnRun, out: *mut *mut c_char) -> LnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        json_out(&borrow(run, "run")?.result.summary, out)
    })
}
