//! C ABI for the micromorph solver: opaque handles, integer status codes and
//! a thread-local last-error message.
//!
//! Ownership: `*_parse`/`*_default`/`mm_solve` return heap-allocated handles
//! that must be released with the matching `*_free`. Strings returned by
//! `mm_version` and `mm_last_error_message` are borrowed; the error message
//! stays valid until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use libc::c_char;

use micromorph::cli::{cmd_mms, cmd_probe, cmd_solve, cmd_verify, AppError, Command, RunConfig};
use micromorph::config::Config;
use micromorph::discretization::{
    solution_p_norms, solution_u_norms, solve_weak_problem, DiscreteSolution, HexMesh,
};
use micromorph::tensor_fields::Point3;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmStatus {
    MmOk = 0,
    MmNullPointer = 1,
    MmInvalidUtf8 = 2,
    MmInvalidConfig = 3,
    MmSolveFailed = 4,
    /// The command ran but a numerical acceptance threshold failed.
    MmThresholdFailed = 5,
    MmIoError = 6,
    MmInvalidArgument = 7,
    MmPanic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_of(err: &AppError) -> MmStatus {
    match err.exit_code() {
        1 => MmStatus::MmSolveFailed,
        _ => MmStatus::MmInvalidConfig,
    }
}

fn guard(f: impl FnOnce() -> MmStatus) -> MmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in micromorph".into());
            set_error(&text);
            MmStatus::MmPanic
        }
    }
}

/// Opaque configuration handle.
pub struct MmConfig {
    inner: Config,
}

/// Opaque solved-problem handle.
pub struct MmSolution {
    solution: DiscreteSolution,
    iterations: u64,
    residual: f64,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread; empty when none.
#[no_mangle]
pub extern "C" fn mm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn read_utf8(ptr: *const c_char) -> Result<String, MmStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(MmStatus::MmNullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s.to_string()),
        Err(_) => {
            set_error("string is not valid UTF-8");
            Err(MmStatus::MmInvalidUtf8)
        }
    }
}

/// Parses a JSON configuration.
///
/// # Safety
/// `json` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer; both must stay valid for the duration of the
/// call.
#[no_mangle]
pub unsafe extern "C" fn mm_config_parse_json(
    json: *const c_char,
    out: *mut *mut MmConfig,
) -> MmStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return MmStatus::MmNullPointer;
        }
        let text = match read_utf8(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: Config = match serde_json::from_str::<Config>(&text) {
            Ok(c) => c,
            Err(e) => {
                set_error(&format!("cannot parse config: {e}"));
                return MmStatus::MmInvalidConfig;
            }
        };
        if let Err(e) = cfg.validate() {
            set_error(&e.to_string());
            return MmStatus::MmInvalidConfig;
        }
        *out = Box::into_raw(Box::new(MmConfig { inner: cfg }));
        MmStatus::MmOk
    })
}

/// Creates the default configuration.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_config_default(out: *mut *mut MmConfig) -> MmStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return MmStatus::MmNullPointer;
        }
        *out = Box::into_raw(Box::new(MmConfig { inner: Config::default() }));
        MmStatus::MmOk
    })
}

/// Releases a configuration handle; a null pointer is ignored.
///
/// # Safety
/// `cfg` must be null or a pointer obtained from a `mm_config_*` constructor
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mm_config_free(cfg: *mut MmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

fn solve_from_config(cfg: &Config) -> Result<MmSolution, MmStatus> {
    let mat = cfg.material.to_material().map_err(|e| {
        set_error(&e.to_string());
        MmStatus::MmInvalidConfig
    })?;
    let mesh = HexMesh::new(cfg.r, cfg.n).map_err(|e| {
        set_error(&e.to_string());
        MmStatus::MmInvalidConfig
    })?;
    let preset = cfg.mms_preset.clone().unwrap_or_else(|| "zero".into());
    let problem = micromorph::discretization::problem_by_name(
        &preset,
        cfg.r,
        &mat,
        micromorph::tensor_fields::CurlConvention::Standard,
    )
    .ok_or_else(|| {
        set_error(&format!("unknown mms preset '{preset}'"));
        MmStatus::MmInvalidConfig
    })?;
    let (solution, _) =
        solve_weak_problem(&mat, &mesh, &problem.f, &problem.m, cfg.cg()).map_err(|e| {
            set_error(&e.to_string());
            MmStatus::MmSolveFailed
        })?;
    let outcome = solution.solve_outcome().expect("solved");
    Ok(MmSolution {
        solution,
        iterations: outcome.iterations as u64,
        residual: outcome.relative_residual,
    })
}

/// Assembles and solves the configured problem (`mms_preset` or zero loads).
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` writable storage for
/// one pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_solve(cfg: *const MmConfig, out: *mut *mut MmSolution) -> MmStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            set_error("null pointer");
            return MmStatus::MmNullPointer;
        }
        match solve_from_config(&(*cfg).inner) {
            Ok(sol) => {
                *out = Box::into_raw(Box::new(sol));
                MmStatus::MmOk
            }
            Err(status) => status,
        }
    })
}

/// Releases a solution handle; a null pointer is ignored.
///
/// # Safety
/// `sol` must be null or a pointer obtained from `mm_solve` that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mm_solution_free(sol: *mut MmSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Evaluates the discrete pair at a point: out = [u1,u2,u3,P11,...,P33].
///
/// # Safety
/// `sol` must be a live solution handle and `out` writable storage for 12
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mm_solution_evaluate(
    sol: *const MmSolution,
    x1: f64,
    x2: f64,
    x3: f64,
    out: *mut f64,
) -> MmStatus {
    guard(|| {
        if sol.is_null() || out.is_null() {
            set_error("null pointer");
            return MmStatus::MmNullPointer;
        }
        let handle = &*sol;
        let r = handle.solution.mesh().half_side();
        if [x1, x2, x3].iter().any(|c| c.abs() > r) {
            set_error("evaluation point lies outside the domain");
            return MmStatus::MmInvalidArgument;
        }
        let state = handle.solution.evaluate(&Point3::new(x1, x2, x3));
        let slice = std::slice::from_raw_parts_mut(out, 12);
        slice[..3].copy_from_slice(&state.u);
        for i in 0..3 {
            for j in 0..3 {
                slice[3 + 3 * i + j] = state.p[i][j];
            }
        }
        MmStatus::MmOk
    })
}

/// Global norms of the solved pair: out = [‖u‖_L2, ‖∇u‖_L2, ‖P‖_L2,
/// ‖Curl P‖_L2].
///
/// # Safety
/// `sol` must be a live solution handle and `out` writable storage for 4
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mm_solution_norms(sol: *const MmSolution, out: *mut f64) -> MmStatus {
    guard(|| {
        if sol.is_null() || out.is_null() {
            set_error("null pointer");
            return MmStatus::MmNullPointer;
        }
        let handle = &*sol;
        let u = solution_u_norms(&handle.solution, None, 3);
        let p = solution_p_norms(&handle.solution, None, 3);
        let slice = std::slice::from_raw_parts_mut(out, 4);
        slice[0] = u.l2();
        slice[1] = u.deriv();
        slice[2] = p.l2();
        slice[3] = p.deriv();
        MmStatus::MmOk
    })
}

/// Iteration count and relative residual of the linear solve.
///
/// # Safety
/// `sol` must be a live solution handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mm_solution_solver_stats(
    sol: *const MmSolution,
    iterations: *mut u64,
    residual: *mut f64,
) -> MmStatus {
    guard(|| {
        if sol.is_null() {
            set_error("null pointer");
            return MmStatus::MmNullPointer;
        }
        if !iterations.is_null() {
            *iterations = (*sol).iterations;
        }
        if !residual.is_null() {
            *residual = (*sol).residual;
        }
        MmStatus::MmOk
    })
}

unsafe fn run_command(
    command: Command,
    cfg: *const MmConfig,
    out_dir: *const c_char,
    seed: u64,
) -> MmStatus {
    if cfg.is_null() {
        set_error("null config pointer");
        return MmStatus::MmNullPointer;
    }
    let dir = match read_utf8(out_dir) {
        Ok(d) => PathBuf::from(d),
        Err(status) => return status,
    };
    let rc = RunConfig { command, config: (*cfg).inner.clone(), out_dir: dir, seed, quiet: true };
    let result = match command {
        Command::Verify => cmd_verify(&rc),
        Command::Solve => cmd_solve(&rc),
        Command::Mms => cmd_mms(&rc),
        Command::Probe => cmd_probe(&rc),
    };
    match result {
        Ok(true) => MmStatus::MmOk,
        Ok(false) => {
            set_error("numerical acceptance thresholds not met; see the written report");
            MmStatus::MmThresholdFailed
        }
        Err(AppError::Io(e)) => {
            set_error(&e.to_string());
            MmStatus::MmIoError
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Runs the identity verification suites and writes verify_report.json.
///
/// # Safety
/// `cfg` must be a live configuration handle; `out_dir` a NUL-terminated
/// path string.
#[no_mangle]
pub unsafe extern "C" fn mm_run_verify(
    cfg: *const MmConfig,
    out_dir: *const c_char,
    seed: u64,
) -> MmStatus {
    guard(|| run_command(Command::Verify, cfg, out_dir, seed))
}

/// Solves one problem and writes solution.csv / solve_summary.json.
///
/// # Safety
/// Same contract as [`mm_run_verify`].
#[no_mangle]
pub unsafe extern "C" fn mm_run_solve(
    cfg: *const MmConfig,
    out_dir: *const c_char,
    seed: u64,
) -> MmStatus {
    guard(|| run_command(Command::Solve, cfg, out_dir, seed))
}

/// Runs the convergence study and writes convergence.csv / mms_summary.json.
///
/// # Safety
/// Same contract as [`mm_run_verify`].
#[no_mangle]
pub unsafe extern "C" fn mm_run_mms(
    cfg: *const MmConfig,
    out_dir: *const c_char,
    seed: u64,
) -> MmStatus {
    guard(|| run_command(Command::Mms, cfg, out_dir, seed))
}

/// Runs the regularity probes and writes the probe tables and summary.
///
/// # Safety
/// Same contract as [`mm_run_verify`].
#[no_mangle]
pub unsafe extern "C" fn mm_run_probe(
    cfg: *const MmConfig,
    out_dir: *const c_char,
    seed: u64,
) -> MmStatus {
    guard(|| run_command(Command::Probe, cfg, out_dir, seed))
}
