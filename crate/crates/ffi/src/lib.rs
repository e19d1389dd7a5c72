//! C ABI for the cascade-qp solver.
//!
//! Problems and solve reports are opaque heap handles created by
//! `cqp_problem_*` / `cqp_solve` and released with the matching `*_free`
//! function. Every fallible call returns a [`CqpStatus`]; on failure a
//! description is available from [`cqp_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cascade_qp::io::{load_problem, problem_from_str, save_problem, save_solution};
use cascade_qp::ipm::{solve, LinearSolver, SolveReport, SolveStatus, SolverOptions};
use cascade_qp::problem::{irrigation_like, random_cascade, CascadeProblem, Dims};
use cascade_qp::Error;

/// Return codes of every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CqpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidProblem = 5,
    Numeric = 6,
    OutOfRange = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CqpLinearSolver {
    Structured = 0,
    Dense = 1,
}

/// Outcome stored in a report.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CqpSolveStatus {
    Converged = 0,
    MaxIterations = 1,
    FactorizationFailure = 2,
}

/// Solver settings. Initialise with [`cqp_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CqpOptions {
    pub sigma_bar: f64,
    pub tau: f64,
    pub max_iterations: u32,
    /// Run exactly this many iterations; 0 disables.
    pub fixed_iterations: u32,
    pub tol_gap: f64,
    pub tol_residual: f64,
    pub linear_solver: CqpLinearSolver,
    pub dense_cap: u64,
}

impl From<&SolverOptions> for CqpOptions {
    fn from(o: &SolverOptions) -> Self {
        CqpOptions {
            sigma_bar: o.sigma_bar,
            tau: o.tau,
            max_iterations: o.max_iterations as u32,
            fixed_iterations: o.fixed_iterations.unwrap_or(0) as u32,
            tol_gap: o.tol_gap,
            tol_residual: o.tol_residual,
            linear_solver: match o.linear_solver {
                LinearSolver::Structured => CqpLinearSolver::Structured,
                LinearSolver::DenseOracle => CqpLinearSolver::Dense,
            },
            dense_cap: o.dense_cap as u64,
        }
    }
}

impl From<&CqpOptions> for SolverOptions {
    fn from(o: &CqpOptions) -> Self {
        SolverOptions {
            sigma_bar: o.sigma_bar,
            tau: o.tau,
            max_iterations: o.max_iterations as usize,
            fixed_iterations: (o.fixed_iterations > 0).then_some(o.fixed_iterations as usize),
            tol_gap: o.tol_gap,
            tol_residual: o.tol_residual,
            linear_solver: match o.linear_solver {
                CqpLinearSolver::Structured => LinearSolver::Structured,
                CqpLinearSolver::Dense => LinearSolver::DenseOracle,
            },
            dense_cap: o.dense_cap as usize,
        }
    }
}

/// Opaque problem handle.
pub struct CqpProblem {
    inner: CascadeProblem,
}

/// Opaque solve report handle.
pub struct CqpReport {
    inner: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    let c = CString::new(s).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CqpStatus, msg: impl Into<String>) -> CqpStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> CqpStatus {
    match e {
        Error::Io { .. } => CqpStatus::Io,
        Error::Parse(_) => CqpStatus::Parse,
        Error::InvalidProblem { .. } | Error::Dimension(_) => CqpStatus::InvalidProblem,
        Error::InvalidArgument(_) | Error::NonNeighborMessage { .. } => CqpStatus::InvalidArgument,
        Error::Factorization { .. } | Error::SingularMatrix | Error::DenseCapExceeded { .. } => CqpStatus::Numeric,
    }
}

fn from_error(e: Error) -> CqpStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, converting panics into `CqpStatus::Panic`.
fn guard(f: impl FnOnce() -> CqpStatus) -> CqpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(CqpStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, CqpStatus> {
    if path.is_null() {
        return Err(fail(CqpStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(CqpStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn store_problem(out: *mut *mut CqpProblem, r: cascade_qp::Result<CascadeProblem>) -> CqpStatus {
    if out.is_null() {
        return fail(CqpStatus::NullPointer, "output pointer is null");
    }
    match r {
        Ok(p) => {
            unsafe { store(out, CqpProblem { inner: p }) };
            CqpStatus::Ok
        }
        Err(e) => {
            unsafe { *out = ptr::null_mut() };
            from_error(e)
        }
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cqp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cqp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or point to writable `CqpOptions`.
#[no_mangle]
pub unsafe extern "C" fn cqp_options_default(out: *mut CqpOptions) -> CqpStatus {
    if out.is_null() {
        return fail(CqpStatus::NullPointer, "options pointer is null");
    }
    *out = CqpOptions::from(&SolverOptions::default());
    CqpStatus::Ok
}

/// Reads a problem file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_load(path: *const c_char, out: *mut *mut CqpProblem) -> CqpStatus {
    guard(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        store_problem(out, load_problem(&path))
    })
}

/// Parses a problem from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_from_json(json: *const c_char, out: *mut *mut CqpProblem) -> CqpStatus {
    guard(|| {
        if json.is_null() {
            return fail(CqpStatus::NullPointer, "json is null");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(CqpStatus::Parse, "json is not valid UTF-8");
        };
        store_problem(out, problem_from_str(text))
    })
}

/// # Safety
/// `problem` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_save(problem: *const CqpProblem, path: *const c_char) -> CqpStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return fail(CqpStatus::NullPointer, "problem is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_problem(&p.inner, &path) {
            Ok(()) => CqpStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Synthetic irrigation channel with `num_subsystems` pools.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_irrigation(
    num_subsystems: usize,
    horizon: usize,
    out: *mut *mut CqpProblem,
) -> CqpStatus {
    guard(|| store_problem(out, irrigation_like(num_subsystems, horizon)))
}

/// Deterministic random instance.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_random(
    seed: u64,
    num_subsystems: usize,
    horizon: usize,
    n: usize,
    m: usize,
    nu: usize,
    out: *mut *mut CqpProblem,
) -> CqpStatus {
    guard(|| store_problem(out, random_cascade(seed, num_subsystems, horizon, Dims::new(n, m, nu))))
}

/// Writes the number of invariant violations to `count`. Returns `Ok`
/// whether or not the problem is valid; the first violation, if any, is
/// available from [`cqp_last_error`].
///
/// # Safety
/// `problem` must be a live handle; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_validate(problem: *const CqpProblem, count: *mut usize) -> CqpStatus {
    guard(|| {
        let (Some(p), false) = (problem.as_ref(), count.is_null()) else {
            return fail(CqpStatus::NullPointer, "null argument");
        };
        let rep = p.inner.validate();
        if let Some(v) = rep.violations.first() {
            set_error(v.message.clone());
        }
        *count = rep.violations.len();
        CqpStatus::Ok
    })
}

/// Number of sub-systems, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_num_subsystems(problem: *const CqpProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.num_subsystems())
}

/// Horizon `T`, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_horizon(problem: *const CqpProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.horizon)
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cqp_problem_free(problem: *mut CqpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solves `problem`. A report is produced whenever the iteration ran,
/// including non-converged runs; query it with [`cqp_report_status`].
/// `options` may be null for the defaults.
///
/// # Safety
/// `problem` must be a live handle, `options` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cqp_solve(
    problem: *const CqpProblem,
    options: *const CqpOptions,
    out: *mut *mut CqpReport,
) -> CqpStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return fail(CqpStatus::NullPointer, "problem is null");
        };
        if out.is_null() {
            return fail(CqpStatus::NullPointer, "output pointer is null");
        }
        *out = ptr::null_mut();
        let opts = options.as_ref().map_or_else(SolverOptions::default, SolverOptions::from);
        match solve(&p.inner, &opts) {
            Ok(r) => {
                store(out, CqpReport { inner: r });
                CqpStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cqp_report_status(report: *const CqpReport) -> CqpSolveStatus {
    match report.as_ref().map(|r| r.inner.status) {
        Some(SolveStatus::Converged) => CqpSolveStatus::Converged,
        Some(SolveStatus::MaxIterations) => CqpSolveStatus::MaxIterations,
        Some(SolveStatus::FactorizationFailure) | None => CqpSolveStatus::FactorizationFailure,
    }
}

/// Newton steps taken, or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cqp_report_iterations(report: *const CqpReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.newton_steps())
}

/// Objective at the final iterate, NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cqp_report_objective(report: *const CqpReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.inner.objective)
}

/// Duality gap at the final iterate, NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cqp_report_final_mu(report: *const CqpReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.inner.final_mu)
}

unsafe fn copy_out(
    report: *const CqpReport,
    j: usize,
    pick: impl Fn(&SolveReport, usize) -> &[f64],
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> CqpStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), written.is_null()) else {
            return fail(CqpStatus::NullPointer, "null argument");
        };
        let n = r.inner.trajectory.xhat.len();
        if j >= n {
            return fail(CqpStatus::OutOfRange, format!("sub-system {j} out of range (have {n}, 0-based)"));
        }
        let src = pick(&r.inner, j);
        *written = src.len();
        if buf.is_null() || len < src.len() {
            return fail(CqpStatus::BufferTooSmall, format!("need {} values, buffer holds {len}", src.len()));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        CqpStatus::Ok
    })
}

/// Copies the stacked state trajectory `(x(0), .., x(T))` of sub-system `j`
/// (0-based) into `buf`. `written` receives the required length even when
/// the buffer is too small, so a null `buf` queries the size.
///
/// # Safety
/// `buf` must hold `len` doubles; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqp_report_state(
    report: *const CqpReport,
    j: usize,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> CqpStatus {
    copy_out(report, j, |r, j| r.trajectory.xhat[j].as_slice(), buf, len, written)
}

/// Copies the stacked input trajectory `(u(0), .., u(T-1))` of sub-system
/// `j`; see [`cqp_report_state`].
///
/// # Safety
/// As for [`cqp_report_state`].
#[no_mangle]
pub unsafe extern "C" fn cqp_report_input(
    report: *const CqpReport,
    j: usize,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> CqpStatus {
    copy_out(report, j, |r, j| r.trajectory.uhat[j].as_slice(), buf, len, written)
}

/// Writes the solution JSON.
///
/// # Safety
/// `report` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cqp_report_save(report: *const CqpReport, path: *const c_char) -> CqpStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(CqpStatus::NullPointer, "report is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_solution(&r.inner, &path) {
            Ok(()) => CqpStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cqp_report_free(report: *mut CqpReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
