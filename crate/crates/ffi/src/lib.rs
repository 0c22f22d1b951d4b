//! C ABI for the covariance steering solver.
//!
//! Problems and solutions are opaque handles created and released by this
//! library. Every function returns a [`CsStatus`]; on failure a message is
//! available from [`cs_last_error`] on the same thread. Matrices are written
//! row-major into caller-provided buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use covsteer::backend::{ClarabelBackend, SolveStatus, SolverSettings};
use covsteer::problem::{tighten_gaussian, CsProblem};
use covsteer::solution::{solve_problem, SolutionFile, SteeringSolution};
use covsteer::transcriber::paper_problem_size;
use covsteer::CsError;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Infeasible = 3,
    CertificateFailed = 4,
    SolverFailure = 5,
    OutOfRange = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

pub struct CsProblemHandle {
    problem: CsProblem,
}

pub struct CsSolutionHandle {
    solution: SteeringSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_for(err: &CsError) -> CsStatus {
    match err {
        CsError::ExtractionRefused(SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible)
        | CsError::InfeasibleMean(_) => CsStatus::Infeasible,
        CsError::ExtractionRefused(_) | CsError::SingularCovariance { .. } | CsError::MalformedProgram(_) => {
            CsStatus::SolverFailure
        }
        _ => CsStatus::InvalidInput,
    }
}

fn fail(status: CsStatus, msg: impl Into<String>) -> CsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> CsStatus) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(CsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(CsStatus::NullPointer, concat!("null pointer: ", stringify!($p)));
        })+
    };
}

fn copy_matrix(m: &DMatrix<f64>, buf: *mut f64, len: usize) -> CsStatus {
    let need = m.nrows() * m.ncols();
    if len < need {
        return fail(CsStatus::BufferTooSmall, format!("buffer holds {len} values, {need} required"));
    }
    // SAFETY: the caller guarantees `buf` points to at least `len` writable doubles.
    let out = unsafe { std::slice::from_raw_parts_mut(buf, need) };
    for (i, row) in m.row_iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            out[i * m.ncols() + j] = *x;
        }
    }
    CsStatus::Ok
}

fn step_out_of_range(k: usize, last: usize) -> CsStatus {
    fail(CsStatus::OutOfRange, format!("step {k} outside 0..={last}"))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a problem from a NUL-terminated JSON string.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cs_problem_from_json(json: *const c_char, out: *mut *mut CsProblemHandle) -> CsStatus {
    guard(|| {
        non_null!(json, out);
        let text = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(t) => t,
            Err(e) => return fail(CsStatus::InvalidInput, format!("problem JSON is not UTF-8: {e}")),
        };
        match CsProblem::from_json(text).and_then(|p| p.ensure_valid().map(|_| p)) {
            Ok(problem) => {
                unsafe { *out = Box::into_raw(Box::new(CsProblemHandle { problem })) };
                CsStatus::Ok
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `handle` must be null or come from [`cs_problem_from_json`], and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_problem_free(handle: *mut CsProblemHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// State, input and noise dimensions and the horizon.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_problem_dims(
    handle: *const CsProblemHandle,
    n: *mut usize,
    p: *mut usize,
    q: *mut usize,
    horizon: *mut usize,
) -> CsStatus {
    guard(|| {
        non_null!(handle, n, p, q, horizon);
        let sys = &unsafe { &*handle }.problem.sys;
        unsafe {
            *n = sys.n();
            *p = sys.p();
            *q = sys.q();
            *horizon = sys.horizon();
        }
        CsStatus::Ok
    })
}

/// Solves the problem. `time_limit` in seconds; zero or negative for none.
///
/// # Safety
/// `problem` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cs_solve(
    problem: *const CsProblemHandle,
    time_limit: f64,
    out: *mut *mut CsSolutionHandle,
) -> CsStatus {
    guard(|| {
        non_null!(problem, out);
        let settings = SolverSettings { time_limit: (time_limit > 0.0).then_some(time_limit), ..Default::default() };
        match solve_problem(&unsafe { &*problem }.problem, &ClarabelBackend, &settings) {
            Ok(solution) => {
                let pass = solution.certificate.pass;
                unsafe { *out = Box::into_raw(Box::new(CsSolutionHandle { solution })) };
                if pass {
                    CsStatus::Ok
                } else {
                    fail(CsStatus::CertificateFailed, "relaxation certificate exceeds tolerance")
                }
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `handle` must be null or come from [`cs_solve`], and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_free(handle: *mut CsSolutionHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_cost(handle: *const CsSolutionHandle, cost: *mut f64) -> CsStatus {
    guard(|| {
        non_null!(handle, cost);
        unsafe { *cost = (*handle).solution.cost };
        CsStatus::Ok
    })
}

/// Horizon of a solution.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_horizon(handle: *const CsSolutionHandle, horizon: *mut usize) -> CsStatus {
    guard(|| {
        non_null!(handle, horizon);
        unsafe { *horizon = (*handle).solution.horizon() };
        CsStatus::Ok
    })
}

/// Largest `λ_max(UΣ⁻¹Uᵀ − Y)` over the horizon and whether every step is
/// within tolerance.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_certificate(
    handle: *const CsSolutionHandle,
    global_max: *mut f64,
    pass: *mut bool,
) -> CsStatus {
    guard(|| {
        non_null!(handle, global_max, pass);
        let cert = &unsafe { &*handle }.solution.certificate;
        unsafe {
            *global_max = cert.global_max;
            *pass = cert.pass;
        }
        CsStatus::Ok
    })
}

/// Feedback gain `K_k` (`p × n`, row-major) for `k < N`.
///
/// # Safety
/// `handle` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_gain(
    handle: *const CsSolutionHandle,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> CsStatus {
    guard(|| {
        non_null!(handle, buf);
        let sol = &unsafe { &*handle }.solution;
        match sol.gains.get(k) {
            Some(g) => copy_matrix(g, buf, len),
            None => step_out_of_range(k, sol.horizon().saturating_sub(1)),
        }
    })
}

/// State covariance `Σ_k` (`n × n`) for `k ≤ N`.
///
/// # Safety
/// `handle` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_covariance(
    handle: *const CsSolutionHandle,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> CsStatus {
    guard(|| {
        non_null!(handle, buf);
        let sol = &unsafe { &*handle }.solution;
        match sol.sigma.get(k) {
            Some(s) => copy_matrix(s, buf, len),
            None => step_out_of_range(k, sol.horizon()),
        }
    })
}

/// State mean `μ_k` for `k ≤ N`.
///
/// # Safety
/// `handle` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_mean(
    handle: *const CsSolutionHandle,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> CsStatus {
    guard(|| {
        non_null!(handle, buf);
        let sol = &unsafe { &*handle }.solution;
        match sol.mu.get(k) {
            Some(m) => copy_matrix(&DMatrix::from_column_slice(m.len(), 1, m.as_slice()), buf, len),
            None => step_out_of_range(k, sol.horizon()),
        }
    })
}

/// Serializes a solution; release the string with [`cs_string_free`].
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_solution_to_json(handle: *const CsSolutionHandle, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        non_null!(handle, out);
        match SolutionFile::from_solution(&unsafe { &*handle }.solution).to_json() {
            Ok(text) => match CString::new(text) {
                Ok(c) => {
                    unsafe { *out = c.into_raw() };
                    CsStatus::Ok
                }
                Err(e) => fail(CsStatus::SolverFailure, e.to_string()),
            },
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `s` must be null or come from this library, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Decision-variable count `N·n² + (N−1)(np + p²)` of the per-step program.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_count_variables(n: usize, p: usize, horizon: usize, out: *mut usize) -> CsStatus {
    guard(|| {
        non_null!(out);
        unsafe { *out = paper_problem_size(n, p, horizon) };
        CsStatus::Ok
    })
}

/// Standard normal quantile `Φ⁻¹(1 − ε)`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_tighten_gaussian(eps: f64, out: *mut f64) -> CsStatus {
    guard(|| {
        non_null!(out);
        match tighten_gaussian(eps) {
            Ok(q) => {
                unsafe { *out = q };
                CsStatus::Ok
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}
