//! C ABI for the cpos simulator.
//!
//! Handles are opaque and owned by the caller once returned; free each with
//! its `_free` function. Every fallible call returns a [`CposStatus`]; on
//! failure a message is kept per thread and can be read back with
//! [`cpos_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cpos::simnet::output::write_outputs;
use cpos::simnet::{run_with, RunOptions, RunOutput, Scenario};
use cpos::tamper_log::LogExport;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CposStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidScenario = 3,
    ParseError = 4,
    Io = 5,
    Panic = 6,
}

/// A parsed, validated scenario.
pub struct CposScenario {
    inner: Scenario,
}

/// The outcome of one run.
pub struct CposRun {
    inner: RunOutput,
}

/// Outcome of verifying an exported log.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CposLogReport {
    pub ok: bool,
    /// Index of the first bad entry, or -1 when `ok`.
    pub first_bad_index: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: CposStatus, msg: impl Into<String>) -> CposStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> CposStatus) -> CposStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(CposStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, CposStatus> {
    if p.is_null() {
        return Err(fail(CposStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CposStatus::InvalidUtf8, "argument is not UTF-8"))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cpos_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates a scenario document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpos_scenario_from_json(json: *const c_char, out: *mut *mut CposScenario) -> CposStatus {
    guard(|| {
        if out.is_null() {
            return fail(CposStatus::NullPointer, "null out pointer");
        }
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let sc = match Scenario::from_json(text) {
            Ok(sc) => sc,
            Err(e) => return fail(CposStatus::InvalidScenario, e.to_string()),
        };
        if let Err(e) = sc.validate() {
            return fail(CposStatus::InvalidScenario, e.to_string());
        }
        *out = Box::into_raw(Box::new(CposScenario { inner: sc }));
        CposStatus::Ok
    })
}

/// A default scenario: `nodes` nodes, `super_peers` of them super peers,
/// running for `duration_ms` of virtual time.
#[no_mangle]
pub extern "C" fn cpos_scenario_basic(seed: u64, nodes: u32, super_peers: u32, duration_ms: i64) -> *mut CposScenario {
    let sc = Scenario::basic(seed, nodes as usize, super_peers as usize, duration_ms);
    Box::into_raw(Box::new(CposScenario { inner: sc }))
}

/// # Safety
/// `sc` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn cpos_scenario_set_seed(sc: *mut CposScenario, seed: u64) -> CposStatus {
    match sc.as_mut() {
        Some(s) => {
            s.inner.seed = seed;
            CposStatus::Ok
        }
        None => fail(CposStatus::NullPointer, "null scenario"),
    }
}

/// # Safety
/// `sc` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpos_scenario_free(sc: *mut CposScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Runs a scenario to completion. With `keep_trace` the full trace is kept
/// so that [`cpos_run_write_outputs`] can write `trace.jsonl`.
///
/// # Safety
/// `sc` must be a live scenario handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpos_run(sc: *const CposScenario, keep_trace: bool, out: *mut *mut CposRun) -> CposStatus {
    guard(|| {
        let (Some(sc), false) = (sc.as_ref(), out.is_null()) else {
            return fail(CposStatus::NullPointer, "null argument");
        };
        let opts = RunOptions {
            keep_trace_lines: keep_trace,
        };
        match run_with(&sc.inner, &opts) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(CposRun { inner: r }));
                CposStatus::Ok
            }
            Err(e) => fail(CposStatus::InvalidScenario, e.to_string()),
        }
    })
}

/// Height of the longest honest chain at the end of the run.
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn cpos_run_final_height(run: *const CposRun) -> u64 {
    run.as_ref().map_or(0, |r| r.inner.summary.final_height)
}

/// Number of invariant violations the run detected.
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn cpos_run_violation_count(run: *const CposRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.violations.len())
}

/// Copies the 32-byte trace digest into `out`.
///
/// # Safety
/// `run` must be a live run handle; `out` must point to 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cpos_run_trace_digest(run: *const CposRun, out: *mut u8) -> CposStatus {
    let Some(r) = run.as_ref() else {
        return fail(CposStatus::NullPointer, "null run");
    };
    if out.is_null() {
        return fail(CposStatus::NullPointer, "null out buffer");
    }
    let d = r.inner.trace_digest;
    ptr::copy_nonoverlapping(d.as_bytes().as_ptr(), out, 32);
    CposStatus::Ok
}

/// Writes the run's output directory.
///
/// # Safety
/// `run` must be a live run handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn cpos_run_write_outputs(run: *const CposRun, dir: *const c_char) -> CposStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(CposStatus::NullPointer, "null run");
        };
        let dir = match str_arg(dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match write_outputs(&r.inner, Path::new(dir)) {
            Ok(()) => CposStatus::Ok,
            Err(e) => fail(CposStatus::Io, format!("{dir}: {e}")),
        }
    })
}

/// # Safety
/// `run` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpos_run_free(run: *mut CposRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Verifies an exported log given as JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpos_verify_log_json(json: *const c_char, out: *mut CposLogReport) -> CposStatus {
    guard(|| {
        if out.is_null() {
            return fail(CposStatus::NullPointer, "null out pointer");
        }
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let export: LogExport = match serde_json::from_str(text) {
            Ok(e) => e,
            Err(e) => return fail(CposStatus::ParseError, e.to_string()),
        };
        let report = export.verify();
        *out = CposLogReport {
            ok: report.ok,
            first_bad_index: report.first_bad_index.map_or(-1, |i| i as i64),
        };
        CposStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_error_truncates() {
        fail(CposStatus::Io, "abcdef");
        let mut buf = [0 as c_char; 4];
        let n = unsafe { cpos_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(n, 6);
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) };
        assert_eq!(s.to_str().unwrap(), "abc");
    }

    #[test]
    fn nulls_are_rejected() {
        let mut out = ptr::null_mut();
        assert_eq!(
            unsafe { cpos_scenario_from_json(ptr::null(), &mut out) },
            CposStatus::NullPointer
        );
        assert_eq!(unsafe { cpos_run(ptr::null(), false, &mut ptr::null_mut()) }, CposStatus::NullPointer);
    }
}
