//! End-to-end tests of the `cpos` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const HOUR: i64 = 3_600_000;

fn cpos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpos")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(seed: u64, hours: i64) -> Value {
    json!({
        "schema_version": 1,
        "name": "cli",
        "seed": seed,
        "duration_ms": hours * HOUR,
        "node_count": 8,
        "super_peer_count": 5,
        "overlay": { "max_connection_fraction": 1.0 }
    })
}

/// Writes `sc` and runs it into `<dir>/out`.
fn run_scenario(dir: &Path, sc: &Value) -> (Output, PathBuf) {
    let path = dir.join("scenario.json");
    fs::write(&path, sc.to_string()).unwrap();
    let out = dir.join("out");
    let o = cpos(&["run", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn trace_records(out: &Path) -> Vec<Value> {
    fs::read_to_string(out.join("trace.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn nearest_rank(sorted: &[i64], p: f64) -> i64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).max(1);
    sorted[rank - 1]
}

#[test]
fn run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_scenario(tmp.path(), &scenario(1, 2));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("height 12"));
    for f in ["trace.jsonl", "chain.jsonl", "txs.json", "metrics.json", "dividends.json", "faults.json", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(out.join("topology/0000.json").is_file());
    assert!(out.join("logs/node-0.json").is_file());
}

#[test]
fn seed_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.json");
    fs::write(&path, scenario(1, 1).to_string()).unwrap();
    let digest = |seed: &str, sub: &str| {
        let out = tmp.path().join(sub);
        let o = cpos(&["run", "--scenario", path.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        read_json(&out.join("summary.json"))["trace_digest"].clone()
    };
    assert_eq!(digest("9", "a"), digest("9", "b"));
    assert_ne!(digest("9", "c"), digest("10", "d"));
}

#[test]
fn invalid_field_named() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = scenario(1, 1);
    sc["overlay"]["max_connection_fraction"] = json!(1.5);
    let (o, out) = run_scenario(tmp.path(), &sc);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("overlay.max_connection_fraction"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unparseable_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.json");
    fs::write(&path, "{ not json").unwrap();
    let o = cpos(&["run", "--scenario", path.to_str().unwrap(), "--out", "/nonexistent/x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn losing_every_super_peer_violates_liveness() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = scenario(4, 3);
    sc["faults"] = (0..5)
        .map(|n| json!({ "at_ms": HOUR, "target": { "node": n }, "mode": { "kind": "crash" } }))
        .collect();
    let (o, _) = run_scenario(tmp.path(), &sc);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("invariant violated: liveness"), "{}", stderr(&o));
}

#[test]
fn trace_follows_a_transaction() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_scenario(tmp.path(), &scenario(2, 2));
    assert_eq!(o.status.code(), Some(0));
    // A submit routed through an intermediate super peer.
    let relayed = trace_records(&out)
        .into_iter()
        .find(|r| r["kind"] == json!("submit") && r["route"].as_array().is_some_and(|h| h.len() > 1))
        .expect("a relayed submit");
    let id = relayed["tx"].as_str().unwrap();
    let txs = read_json(&out.join("txs.json"));
    let tx = txs.as_array().unwrap().iter().find(|t| t["txid"] == json!(id)).unwrap();
    let o = cpos(&["trace", "--out", out.to_str().unwrap(), "--txid", id]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let hops = tx["round_trip_hops"].as_u64().unwrap();
    assert!(text.contains(&format!("round trip: {hops} hops")), "{text}");
    let h = tx["included_height"].as_u64().unwrap();
    assert!(text.contains(&format!("status: confirmed at height {h}")), "{text}");
    assert!(text.contains("relay"));
}

#[test]
fn trace_unknown_txid() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out) = run_scenario(tmp.path(), &scenario(2, 1));
    let o = cpos(&["trace", "--out", out.to_str().unwrap(), "--txid", &"ab".repeat(32)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("NotFound"));
    let o = cpos(&["trace", "--out", out.to_str().unwrap(), "--txid", "xyz"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("NotFound"));
}

#[test]
fn trace_shows_free_quota_rejection() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = scenario(5, 1);
    sc["mint_policy"] = json!({ "block_interval_ms": 600000, "max_block_txs": 20, "free_tx_fraction": 0.05 });
    sc["workload"] = json!({
        "tx_per_node_per_hour": 30.0, "zero_fee_fraction": 1.0, "fee": 1000,
        "amount_min": 1, "amount_max": 100, "utxos_per_node": 50
    });
    let (o, out) = run_scenario(tmp.path(), &sc);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let txs = read_json(&out.join("txs.json"));
    let rejected = txs
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["reject_reason"] == json!("free-quota-exhausted"))
        .expect("an over-quota tx");
    let o = cpos(&["trace", "--out", out.to_str().unwrap(), "--txid", rejected["txid"].as_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("status: rejected(free-quota-exhausted)"), "{}", stdout(&o));
}

#[test]
fn verify_log_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out) = run_scenario(tmp.path(), &scenario(6, 1));
    let log = out.join("logs/node-0.json");
    let o = cpos(&["verify-log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "ok");

    let mut doc = read_json(&log);
    let entry = &mut doc["export"]["entries"][3]["payload_digest"];
    let flipped = if entry.as_str().unwrap().starts_with('0') { "1" } else { "0" };
    *entry = json!(format!("{flipped}{}", &entry.as_str().unwrap()[1..]));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let o = cpos(&["verify-log", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("first_bad_index 3"), "{}", stdout(&o));

    let text = fs::read_to_string(&log).unwrap();
    let cut = tmp.path().join("cut.json");
    fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let o = cpos(&["verify-log", cut.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("parse failure"));
}

fn subsidy(h: u64) -> u64 {
    let halvings = h / 210_000;
    if halvings >= 64 {
        0
    } else {
        5_000_000_000 >> halvings
    }
}

#[test]
fn report_matches_independent_totals() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_scenario(tmp.path(), &scenario(7, 24));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = cpos(&["report", "--out", out.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["blocks"], json!(144));

    // Subsidy plus fees, straight from the chain.
    let mut expected = 0u64;
    for line in fs::read_to_string(out.join("chain.jsonl")).unwrap().lines() {
        let b: Value = serde_json::from_str(line).unwrap();
        let h = b["height"].as_u64().unwrap();
        if h == 0 {
            continue;
        }
        expected += subsidy(h);
        for a in b["txs"].as_array().unwrap() {
            expected += a["tx"]["fee"].as_u64().unwrap();
        }
    }
    let d = &report["dividends"];
    assert_eq!(d["block_total"].as_u64().unwrap(), expected);
    assert_eq!(d["paid_total"].as_u64().unwrap() + d["carried_out"].as_u64().unwrap(), expected);

    // Second pass over the trace: confirmed count and latency percentiles.
    let records = trace_records(&out);
    let mut issued = BTreeMap::new();
    let mut acked = BTreeMap::new();
    for r in &records {
        let Some(tx) = r["tx"].as_str() else { continue };
        match r["kind"].as_str().unwrap() {
            "tx-issued" => {
                issued.insert(tx.to_string(), r["t"].as_i64().unwrap());
            }
            "tx-acked" => {
                acked.entry(tx.to_string()).or_insert(r["t"].as_i64().unwrap());
            }
            _ => {}
        }
    }
    let mut lat: Vec<i64> = acked.iter().map(|(tx, t)| t - issued[tx]).collect();
    lat.sort_unstable();
    let p = &report["ack_latency_ms"];
    assert_eq!(p["count"].as_u64().unwrap() as usize, lat.len());
    assert_eq!(p["p50"].as_i64().unwrap(), nearest_rank(&lat, 0.5));
    assert_eq!(p["p99"].as_i64().unwrap(), nearest_rank(&lat, 0.99));
    assert_eq!(report["txs_issued"].as_u64().unwrap() as usize, issued.len());

    let o = cpos(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("blocks: 144"));
}

#[test]
fn metrics_p99_matches_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = scenario(8, 3);
    sc["workload"] = json!({
        "tx_per_node_per_hour": 10.0, "zero_fee_fraction": 0.1, "fee": 1000,
        "amount_min": 1, "amount_max": 100, "utxos_per_node": 50
    });
    let (o, out) = run_scenario(tmp.path(), &sc);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut issued = BTreeMap::new();
    let mut lat = Vec::new();
    for r in trace_records(&out) {
        match r["kind"].as_str().unwrap() {
            "tx-issued" => {
                issued.insert(r["tx"].as_str().unwrap().to_string(), r["t"].as_i64().unwrap());
            }
            "tx-acked" => lat.push(r["t"].as_i64().unwrap() - issued[r["tx"].as_str().unwrap()]),
            _ => {}
        }
    }
    lat.sort_unstable();
    let metrics = read_json(&out.join("metrics.json"));
    let last = metrics.as_array().unwrap().last().unwrap();
    assert_eq!(last["ack_round_trip_ms"]["p99"].as_i64().unwrap(), nearest_rank(&lat, 0.99));
    assert_eq!(last["ack_round_trip_ms"]["count"].as_u64().unwrap() as usize, lat.len());
}

#[test]
fn usage_errors() {
    assert_eq!(cpos(&[]).status.code(), Some(2));
    assert_eq!(cpos(&["run"]).status.code(), Some(2));
    assert_eq!(cpos(&["--help"]).status.code(), Some(0));
}

#[test]
fn bundled_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let sc = cpos::simnet::Scenario::from_json(&fs::read_to_string(&p).unwrap()).unwrap();
        sc.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 2);
}
