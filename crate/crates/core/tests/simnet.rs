use cpos::agents::FindingKind;
use cpos::simnet::{run, FaultMode, FaultSpec, FaultTarget, Scenario};

const HOUR: i64 = 3_600_000;

fn small(seed: u64, hours: i64) -> Scenario {
    let mut sc = Scenario::basic(seed, 8, 5, hours * HOUR);
    sc.overlay.max_connection_fraction = 1.0;
    sc
}

#[test]
fn audit_finds_tampered_entry() {
    let mut sc = small(21, 26);
    sc.faults.push(FaultSpec {
        at_ms: 2 * HOUR,
        target: Some(FaultTarget::Node(6)),
        mode: FaultMode::TamperLogEntry { index: 5 },
    });
    let out = run(&sc).unwrap();
    let f = out
        .findings
        .iter()
        .find(|f| f.target == 6 && f.finding.kind == FindingKind::LogTamper)
        .expect("tamper found");
    assert_eq!(f.finding.detail, vec![5]);
    assert!(out.bans.iter().any(|b| b.node == 6));
    assert!(out.violations.is_empty(), "{:?}", out.violations);
}

#[test]
fn corrupt_replica_repaired() {
    let mut sc = small(22, 26);
    // Probe every byte so detection does not depend on sampling.
    sc.agents.audit_probe_bytes = 1 << 20;
    sc.faults.push(FaultSpec {
        at_ms: 2 * HOUR,
        target: Some(FaultTarget::Node(7)),
        mode: FaultMode::CorruptReplicaByte { offset: 200 },
    });
    let out = run(&sc).unwrap();
    assert!(out
        .findings
        .iter()
        .any(|f| f.target == 7 && f.finding.kind == FindingKind::MissingBytes && f.finding.detail.contains(&200)));
    assert!(out.violations.is_empty(), "{:?}", out.violations);
}

#[test]
fn one_hour_skew_leaves_blocks_unchanged() {
    let plain = small(23, 2);
    let mut skewed = plain.clone();
    skewed.clock_skews_ms.insert(3, HOUR);
    let (a, b) = (run(&plain).unwrap(), run(&skewed).unwrap());
    let hashes = |o: &cpos::simnet::RunOutput| o.seals.iter().map(|s| s.block_hash).collect::<Vec<_>>();
    assert_eq!(hashes(&a), hashes(&b));
    assert_eq!(a.final_chain.height(), 12);
}

#[test]
fn same_seed_same_digest() {
    let sc = small(24, 1);
    assert_eq!(run(&sc).unwrap().trace_digest, run(&sc).unwrap().trace_digest);
}
