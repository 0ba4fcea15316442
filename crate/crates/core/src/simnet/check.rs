//! Online invariant checker.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::Digest;
use crate::ledger::Chain;

use super::message::CommitNotice;
use super::node::Node;
use super::record::{TxRecord, TxStatus, Violation};

/// Slack between issuing a tx and its ack reaching the mint.
const ACK_SLACK_MS: i64 = 1_000;

pub(crate) struct Checker {
    faulty: BTreeSet<u32>,
    /// First honest commit per (height, epoch).
    committed: BTreeMap<(u64, u64), (u32, Digest)>,
    captured: BTreeSet<u64>,
    /// (time, new max honest height).
    progress: Vec<(i64, u64)>,
    max_height: u64,
    violations: Vec<Violation>,
    seen: BTreeSet<(String, String)>,
}

impl Checker {
    pub fn new(_nodes: usize) -> Self {
        Checker {
            faulty: BTreeSet::new(),
            committed: BTreeMap::new(),
            captured: BTreeSet::new(),
            progress: Vec::new(),
            max_height: 0,
            violations: Vec::new(),
            seen: BTreeSet::new(),
        }
    }

    /// Marks a node as faulty (byzantine or fault-injected).
    pub fn mark_faulty(&mut self, n: u32) {
        self.faulty.insert(n);
    }

    pub fn is_faulty(&self, n: u32) -> bool {
        self.faulty.contains(&n)
    }

    pub fn violation(&mut self, now: i64, invariant: &str, detail: String) {
        if self.seen.insert((invariant.to_string(), detail.clone())) {
            self.violations.push(Violation {
                invariant: invariant.into(),
                at_ms: now,
                detail,
            });
        }
    }

    /// Flags certificates that no honest stakeholder signed.
    pub fn on_certificate(&mut self, notice: &CommitNotice, nodes: &[Node]) {
        let honest_vote = notice.cert.votes.iter().any(|v| {
            nodes
                .iter()
                .find(|n| *n.addr() == v.voter)
                .is_some_and(|n| !n.byzantine && !self.faulty.contains(&n.id))
        });
        if !honest_vote {
            self.captured.insert(notice.cert.height);
        }
    }

    pub fn on_commit(&mut self, n: u32, h: u64, e: u64, hash: Digest, now: i64) {
        if self.faulty.contains(&n) {
            return;
        }
        match self.committed.get(&(h, e)) {
            Some(&(other, prior)) if prior != hash => {
                self.violation(
                    now,
                    "safety",
                    format!("height {h} epoch {e}: node {other} committed {prior}, node {n} committed {hash}"),
                );
            }
            Some(_) => {}
            None => {
                self.committed.insert((h, e), (n, hash));
            }
        }
        if h > self.max_height {
            self.max_height = h;
            self.progress.push((now, h));
        }
    }

    /// Honest chains must agree on their common prefix.
    pub fn check_final_prefix(&mut self, now: i64, chains: &[(u32, &Chain)]) {
        let Some((longest_id, longest)) = chains.iter().max_by_key(|(_, c)| c.height()) else {
            return;
        };
        for (n, c) in chains {
            for b in c.blocks() {
                let other = longest.block_at(b.height).map(|x| x.block_hash);
                if other != Some(b.block_hash) {
                    self.violation(
                        now,
                        "safety",
                        format!("final chains of nodes {n} and {longest_id} diverge at height {}", b.height),
                    );
                    break;
                }
            }
        }
    }

    /// The honest chain must grow at least every `max_gap` ms until `until`.
    pub fn check_liveness(&mut self, until: i64, max_gap: i64) {
        let mut last = 0;
        for (t, h) in self.progress.clone() {
            if t > until {
                break;
            }
            if t - last > max_gap {
                self.violation(t, "liveness", format!("no progress from {last} to {t} (height {h})"));
            }
            last = t;
        }
        if until - last > max_gap {
            self.violation(until, "liveness", format!("no progress after {last}"));
        }
    }

    /// Every fee-paying tx not rejected is included within one interval of
    /// the first seal after its ack.
    pub fn check_tx_liveness(&mut self, txs: &[TxRecord], chain: &Chain, interval: i64, until: i64) {
        let included: BTreeMap<Digest, i64> = chain
            .blocks()
            .iter()
            .flat_map(|b| b.txs.iter().map(move |a| (a.tx.id, b.timestamp)))
            .collect();
        for t in txs {
            if t.fee == 0 || t.status == TxStatus::Rejected {
                continue;
            }
            let boundary = ((t.issued_at_ms + ACK_SLACK_MS) / interval + 1) * interval;
            let deadline = boundary + interval;
            if deadline > until {
                continue;
            }
            let ok = included.get(&t.txid).is_some_and(|&ts| ts <= deadline);
            if !ok {
                self.violation(
                    deadline,
                    "tx-liveness",
                    format!("tx {} issued at {} not included by {deadline}", t.txid, t.issued_at_ms),
                );
            }
        }
    }

    pub fn into_parts(self) -> (Vec<Violation>, Vec<u64>) {
        (self.violations, self.captured.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash_parts;

    #[test]
    fn conflicting_commits_flagged_once() {
        let mut c = Checker::new(3);
        let (a, b) = (hash_parts(&[b"a"]), hash_parts(&[b"b"]));
        c.on_commit(0, 1, 0, a, 10);
        c.on_commit(1, 1, 0, a, 11);
        c.on_commit(2, 1, 0, b, 12);
        c.on_commit(2, 1, 0, b, 12);
        let (v, _) = c.into_parts();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, "safety");
    }

    #[test]
    fn faulty_commits_ignored() {
        let mut c = Checker::new(2);
        c.mark_faulty(1);
        c.on_commit(0, 1, 0, hash_parts(&[b"a"]), 10);
        c.on_commit(1, 1, 0, hash_parts(&[b"b"]), 10);
        assert!(c.into_parts().0.is_empty());
    }

    #[test]
    fn liveness_gap() {
        let mut c = Checker::new(1);
        c.on_commit(0, 1, 0, hash_parts(&[b"a"]), 600);
        c.on_commit(0, 2, 0, hash_parts(&[b"b"]), 5_000);
        c.check_liveness(5_500, 1_000);
        let (v, _) = c.into_parts();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, "liveness");
    }
}
