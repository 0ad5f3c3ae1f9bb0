//! C ABI over `pdelay`.
//!
//! Handles are opaque pointers created and destroyed by this library. Every
//! fallible call returns a [`PdStatus`]; on failure a message is available
//! from [`pd_last_error`] on the same thread until the next call.
//! Strings returned through `char **` must be released with
//! [`pd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pdelay::experiments::{self, ExperimentConfig, RunOutput, Trace, Verdict};
use pdelay::Error;

/// Result codes. Values 1 and 2 agree with the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdStatus {
    Ok = 0,
    Config = 1,
    Divergence = 2,
    Structural = 4,
    Numerical = 5,
    Protocol = 6,
    Inapplicable = 7,
    Parse = 8,
    Io = 9,
    NullPointer = 10,
    InvalidUtf8 = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Outcome of [`pd_check_trace`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdVerdict {
    Pass = 0,
    Violation = 1,
    NotApplicable = 2,
}

/// A validated experiment configuration.
pub struct PdExperiment {
    config: ExperimentConfig,
}

/// The result of running an experiment.
pub struct PdRun {
    output: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PdStatus {
    match e {
        Error::Structural(_) => PdStatus::Structural,
        Error::Config(_) | Error::Json(_) => PdStatus::Config,
        Error::Numerical(_) => PdStatus::Numerical,
        Error::Protocol { .. } => PdStatus::Protocol,
        Error::Inapplicable(_) => PdStatus::Inapplicable,
        Error::Divergence { .. } => PdStatus::Divergence,
        Error::Parse { .. } => PdStatus::Parse,
        Error::Io(_) => PdStatus::Io,
    }
}

/// Runs `f`, recording errors and containing panics.
fn guard(f: impl FnOnce() -> Result<(), (PdStatus, String)>) -> PdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PdStatus::Panic
        }
    }
}

fn lib(e: Error) -> (PdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PdStatus, String) {
    (PdStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (PdStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| (PdStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), (PdStatus, String)> {
    let c = CString::new(s).map_err(|e| (PdStatus::Config, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn pd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a JSON experiment configuration.
///
/// Relative file paths inside the document are resolved against `base_dir`
/// when it is not NULL.
///
/// # Safety
/// `json` and `base_dir` (if not NULL) must be NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_experiment_from_json(
    json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut PdExperiment,
) -> PdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(json, "json")?;
        let mut config = ExperimentConfig::from_json(text).map_err(lib)?;
        if !base_dir.is_null() {
            config.resolve_paths(std::path::Path::new(read_str(base_dir, "base_dir")?));
        }
        *out = Box::into_raw(Box::new(PdExperiment { config }));
        Ok(())
    })
}

/// Overrides the experiment seed.
///
/// # Safety
/// `exp` must be a handle from [`pd_experiment_from_json`] or NULL.
#[no_mangle]
pub unsafe extern "C" fn pd_experiment_set_seed(exp: *mut PdExperiment, seed: u64) -> PdStatus {
    guard(|| {
        let exp = exp.as_mut().ok_or_else(|| null("experiment"))?;
        exp.config.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a handle from [`pd_experiment_from_json`] or NULL, and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_experiment_free(exp: *mut PdExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Text report of problem constants, stepsize plans and certificates.
///
/// # Safety
/// `exp` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_tune_report(exp: *const PdExperiment, out: *mut *mut c_char) -> PdStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("experiment"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_string(out, experiments::tune_report(&exp.config).map_err(lib)?)
    })
}

/// Runs the experiment.
///
/// # Safety
/// `exp` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_run(exp: *const PdExperiment, out: *mut *mut PdRun) -> PdStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("experiment"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let output = experiments::run_experiment(&exp.config).map_err(lib)?;
        *out = Box::into_raw(Box::new(PdRun { output }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a handle from [`pd_run`] or NULL, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_run_free(run: *mut PdRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of iterations performed.
///
/// # Safety
/// `run` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_run_iterations(run: *const PdRun, out: *mut usize) -> PdStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = run.output.trace.rows.len() - 1;
        Ok(())
    })
}

/// The CSV trace of the run.
///
/// # Safety
/// `run` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pd_run_trace_csv(run: *const PdRun, out: *mut *mut c_char) -> PdStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_string(out, run.output.trace.to_csv().map_err(lib)?)
    })
}

/// Copies the final iterate, flattened block by block, into `x` and `u`.
///
/// On entry `*x_len` and `*u_len` hold the buffer capacities; on return they
/// hold the required lengths. Passing NULL buffers queries the lengths only.
/// Fails with `BufferTooSmall` (lengths still written) when a buffer is too
/// short, and with `Inapplicable` for the dual decomposition baseline.
///
/// # Safety
/// `x_len`, `u_len` must be valid; non-NULL buffers must hold at least the
/// stated capacity.
#[no_mangle]
pub unsafe extern "C" fn pd_run_final_iterate(
    run: *const PdRun,
    x: *mut f64,
    x_len: *mut usize,
    u: *mut f64,
    u_len: *mut usize,
) -> PdStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if x_len.is_null() || u_len.is_null() {
            return Err(null("length pointer"));
        }
        let log = run.output.log.as_ref().ok_or_else(|| {
            (
                PdStatus::Inapplicable,
                "the dual decomposition baseline has no primal-dual iterate".to_string(),
            )
        })?;
        let xs = log.final_iterate.x.to_flat();
        let us = log.final_iterate.u.to_flat();
        let (cap_x, cap_u) = (*x_len, *u_len);
        *x_len = xs.len();
        *u_len = us.len();
        if x.is_null() && u.is_null() {
            return Ok(());
        }
        if x.is_null() || u.is_null() || cap_x < xs.len() || cap_u < us.len() {
            return Err((
                PdStatus::BufferTooSmall,
                format!("need {} primal and {} dual entries", xs.len(), us.len()),
            ));
        }
        ptr::copy_nonoverlapping(xs.as_ptr(), x, xs.len());
        ptr::copy_nonoverlapping(us.as_ptr(), u, us.len());
        Ok(())
    })
}

/// Replays a CSV trace against the theory covering the experiment.
///
/// # Safety
/// `exp` must be a valid handle, `csv` a NUL-terminated string, `verdict`
/// a valid pointer; `report` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn pd_check_trace(
    exp: *const PdExperiment,
    csv: *const c_char,
    verdict: *mut PdVerdict,
    report: *mut *mut c_char,
) -> PdStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("experiment"))?;
        if verdict.is_null() {
            return Err(null("verdict"));
        }
        let trace = Trace::from_csv(read_str(csv, "csv")?).map_err(lib)?;
        let outcome = experiments::check_trace(&exp.config, &trace).map_err(lib)?;
        *verdict = match outcome.verdict {
            Verdict::Pass => PdVerdict::Pass,
            Verdict::Violation => PdVerdict::Violation,
            Verdict::NotApplicable => PdVerdict::NotApplicable,
        };
        if !report.is_null() {
            write_string(report, outcome.report)?;
        }
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be NULL, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
