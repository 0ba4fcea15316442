use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use cpos_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { cpos_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

const SCENARIO: &str = r#"{"schema_version": 1, "seed": 5, "duration_ms": 3600000,
    "node_count": 12, "super_peer_count": 5, "overlay": {"max_connection_fraction": 1.0}}"#;

fn run_digest(seed: u64) -> ([u8; 32], u64) {
    let json = CString::new(SCENARIO).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { cpos_scenario_from_json(json.as_ptr(), &mut sc) }, CposStatus::Ok);
    assert_eq!(unsafe { cpos_scenario_set_seed(sc, seed) }, CposStatus::Ok);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { cpos_run(sc, false, &mut run) }, CposStatus::Ok);
    let mut d = [0u8; 32];
    assert_eq!(unsafe { cpos_run_trace_digest(run, d.as_mut_ptr()) }, CposStatus::Ok);
    let h = unsafe { cpos_run_final_height(run) };
    assert_eq!(unsafe { cpos_run_violation_count(run) }, 0);
    unsafe {
        cpos_run_free(run);
        cpos_scenario_free(sc);
    }
    (d, h)
}

#[test]
fn run_through_handles_is_deterministic() {
    let (a, h) = run_digest(9);
    assert_eq!(h, 6);
    assert_eq!(run_digest(9).0, a);
    assert_ne!(run_digest(10).0, a);
}

#[test]
fn invalid_scenario_reports_field() {
    let json = CString::new(r#"{"schema_version": 1, "seed": 1, "duration_ms": 1000, "node_count": 12, "super_peer_count": 5, "overlay": {"max_connection_fraction": 1.5}}"#).unwrap();
    let mut sc = ptr::null_mut();
    let st = unsafe { cpos_scenario_from_json(json.as_ptr(), &mut sc) };
    assert_eq!(st, CposStatus::InvalidScenario);
    assert!(sc.is_null());
    assert!(last_error().contains("max_connection_fraction"));
}

#[test]
fn written_log_verifies_and_corruption_is_located() {
    let dir = tempfile::tempdir().unwrap();
    let json = CString::new(SCENARIO).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { cpos_scenario_from_json(json.as_ptr(), &mut sc) }, CposStatus::Ok);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { cpos_run(sc, true, &mut run) }, CposStatus::Ok);
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cpos_run_write_outputs(run, path.as_ptr()) }, CposStatus::Ok);
    unsafe {
        cpos_run_free(run);
        cpos_scenario_free(sc);
    }
    let node: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("logs/node-0.json")).unwrap()).unwrap();
    let mut export = node["export"].clone();
    let text = CString::new(export.to_string()).unwrap();
    let mut rep = CposLogReport { ok: false, first_bad_index: 0 };
    assert_eq!(unsafe { cpos_verify_log_json(text.as_ptr(), &mut rep) }, CposStatus::Ok);
    assert!(rep.ok);
    assert_eq!(rep.first_bad_index, -1);
    let old = export["entries"][1]["local_timestamp"].as_i64().unwrap();
    export["entries"][1]["local_timestamp"] = (old + 1).into();
    let text = CString::new(export.to_string()).unwrap();
    assert_eq!(unsafe { cpos_verify_log_json(text.as_ptr(), &mut rep) }, CposStatus::Ok);
    assert!(!rep.ok);
    assert_eq!(rep.first_bad_index, 1);
}

#[test]
fn unvalidated_basic_scenario_fails_at_run() {
    // Twelve nodes cannot host three uplinks each under the default link cap.
    let sc = cpos_scenario_basic(3, 12, 5, 1_800_000);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { cpos_run(sc, false, &mut run) }, CposStatus::InvalidScenario);
    assert!(run.is_null());
    unsafe { cpos_scenario_free(sc) };
}

#[test]
fn garbage_log_is_parse_error() {
    let text = CString::new("[{").unwrap();
    let mut rep = CposLogReport { ok: true, first_bad_index: 0 };
    assert_eq!(unsafe { cpos_verify_log_json(text.as_ptr(), &mut rep) }, CposStatus::ParseError);
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cpos.h")).unwrap();
    for f in [
        "cpos_last_error",
        "cpos_scenario_from_json",
        "cpos_scenario_basic",
        "cpos_scenario_set_seed",
        "cpos_scenario_free",
        "cpos_run(",
        "cpos_run_final_height",
        "cpos_run_violation_count",
        "cpos_run_trace_digest",
        "cpos_run_write_outputs",
        "cpos_run_free",
        "cpos_verify_log_json",
        "typedef struct CposRun CposRun",
        "CPOS_STATUS_INVALID_SCENARIO = 3",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"cpos.h\"\nint main(void) { CposScenario *s = cpos_scenario_basic(1, 60, 10, 1); cpos_scenario_free(s); return 0; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
