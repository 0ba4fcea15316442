//! Happens-before relation recovered from entanglement receipts.
//!
//! The relation is represented by the per-log lengths (sequence order inside
//! each log) plus one cross edge per receipt. Reachability is computed on
//! demand, so large logs never materialize the quadratic closure unless
//! [`HappensBefore::pairs`] is called.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ActivityKind, EntanglementReceipt, LogEntry};
use crate::crypto::Address;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogPosition {
    pub log: Address,
    pub index: u64,
}

impl LogPosition {
    pub fn new(log: Address, index: u64) -> Self {
        Self { log, index }
    }
}

/// Every variant means the receipt set is inconsistent with the logs.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OrderError {
    #[error("receipts imply a cycle through {0:?}")]
    Cycle(LogPosition),
    #[error("receipt references {0:?} which is not in the supplied logs")]
    OutOfRange(LogPosition),
    #[error("receipt at {0:?} does not match the recorded entangle entry")]
    Mismatch(LogPosition),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HappensBefore {
    lengths: BTreeMap<Address, u64>,
    /// `(from, to)`: `from` and everything before it precede `to`.
    cross: BTreeSet<(LogPosition, LogPosition)>,
}

impl HappensBefore {
    pub fn lengths(&self) -> &BTreeMap<Address, u64> {
        &self.lengths
    }

    pub fn cross_edges(&self) -> &BTreeSet<(LogPosition, LogPosition)> {
        &self.cross
    }

    fn contains(&self, p: &LogPosition) -> bool {
        self.lengths.get(&p.log).is_some_and(|&n| p.index < n)
    }

    /// For each log, the smallest index that is `a` or causally after it.
    fn frontier(&self, a: &LogPosition) -> BTreeMap<Address, u64> {
        let mut front = BTreeMap::new();
        front.insert(a.log.clone(), a.index);
        loop {
            let mut changed = false;
            for (u, v) in &self.cross {
                let reached = front.get(&u.log).is_some_and(|&i| i <= u.index);
                if reached {
                    let cur = front.entry(v.log.clone()).or_insert(u64::MAX);
                    if v.index < *cur {
                        *cur = v.index;
                        changed = true;
                    }
                }
            }
            if !changed {
                return front;
            }
        }
    }

    /// True iff the logs and receipts prove `a` happened before `b`.
    pub fn precedes(&self, a: &LogPosition, b: &LogPosition) -> bool {
        if a == b || !self.contains(a) || !self.contains(b) {
            return false;
        }
        if a.log == b.log {
            return a.index < b.index;
        }
        self.frontier(a).get(&b.log).is_some_and(|&i| i <= b.index)
    }

    /// Full transitive closure. Quadratic in total log length.
    pub fn pairs(&self) -> Vec<(LogPosition, LogPosition)> {
        let mut out = Vec::new();
        for (log, &n) in &self.lengths {
            for i in 0..n {
                let a = LogPosition::new(log.clone(), i);
                let front = self.frontier(&a);
                for (other, &m) in &self.lengths {
                    let start = match front.get(other) {
                        Some(&s) if other == log => s + 1,
                        Some(&s) => s,
                        None => continue,
                    };
                    for j in start..m {
                        out.push((a.clone(), LogPosition::new(other.clone(), j)));
                    }
                }
            }
        }
        out
    }
}

/// Order over two logs. See [`derive_order_multi`].
pub fn derive_order(
    log_a: (&Address, &[LogEntry]),
    log_b: (&Address, &[LogEntry]),
    receipts: &[EntanglementReceipt],
) -> Result<HappensBefore, OrderError> {
    derive_order_multi(&[log_a, log_b], receipts)
}

/// Builds the happens-before relation over any number of logs.
///
/// A receipt recorded at local index `k` against remote head `h` yields the
/// edge `(remote, h) -> (local, k + 1)`. Receipts are cross-checked against
/// the entangle entry they claim and against the remote log's authenticator
/// at `h` when that log is supplied.
pub fn derive_order_multi(
    logs: &[(&Address, &[LogEntry])],
    receipts: &[EntanglementReceipt],
) -> Result<HappensBefore, OrderError> {
    let by_owner: BTreeMap<&Address, &[LogEntry]> = logs.iter().copied().collect();
    let lengths = logs
        .iter()
        .map(|(a, e)| ((*a).clone(), e.len() as u64))
        .collect();
    let mut cross = BTreeSet::new();
    for r in receipts {
        let local = LogPosition::new(r.local_owner.clone(), r.local_entry_index);
        let remote = LogPosition::new(
            r.remote_authenticator.log_owner.clone(),
            r.remote_authenticator.head_index,
        );
        let local_log = by_owner
            .get(&r.local_owner)
            .ok_or_else(|| OrderError::OutOfRange(local.clone()))?;
        let entry = local_log
            .get(r.local_entry_index as usize)
            .ok_or_else(|| OrderError::OutOfRange(local.clone()))?;
        if entry.activity_kind != ActivityKind::Entangle
            || entry.payload_digest != r.remote_authenticator.head_digest
            || entry.counterparty != r.remote_authenticator.log_owner
        {
            return Err(OrderError::Mismatch(local));
        }
        if let Some(remote_log) = by_owner.get(&remote.log) {
            match remote_log.get(remote.index as usize) {
                Some(e) if e.authenticator == r.remote_authenticator.head_digest => {}
                Some(_) => return Err(OrderError::Mismatch(remote)),
                None => return Err(OrderError::OutOfRange(remote)),
            }
            cross.insert((remote, LogPosition::new(local.log, local.index + 1)));
        }
    }
    let hb = HappensBefore { lengths, cross };
    for (u, v) in &hb.cross {
        let front = hb.frontier(v);
        if front.get(&u.log).is_some_and(|&i| i <= u.index) {
            return Err(OrderError::Cycle(u.clone()));
        }
    }
    Ok(hb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, keygen_with, KeyPair, Scheme};
    use crate::tamper_log::TamperLog;

    fn key(n: u8) -> KeyPair {
        keygen_with(Scheme::HashDouble, &[n; 32])
    }

    fn push(log: &mut TamperLog, n: usize, ts: i64) {
        for i in 0..n {
            log.append(
                ActivityKind::IssueTx,
                hash(&[i as u8]),
                Address::from_label("x"),
                ts,
            )
            .unwrap();
        }
    }

    #[test]
    fn receipt_orders_remote_head_before_next_local_entry() {
        let (ka, kb) = (key(1), key(2));
        let mut a = TamperLog::new(ka.address.clone());
        let mut b = TamperLog::new(kb.address.clone());
        push(&mut a, 3, 0);
        push(&mut b, 8, 0);
        let r = a.entangle(&b.authenticator(&kb).unwrap(), 1).unwrap();
        assert_eq!(r.local_entry_index, 3);
        push(&mut a, 2, 2);
        let hb = derive_order(
            (&ka.address, a.entries()),
            (&kb.address, b.entries()),
            &[r],
        )
        .unwrap();
        let b7 = LogPosition::new(kb.address.clone(), 7);
        let a4 = LogPosition::new(ka.address.clone(), 4);
        assert!(hb.precedes(&b7, &a4));
        assert!(hb.precedes(&LogPosition::new(kb.address.clone(), 0), &a4));
        assert!(!hb.precedes(&a4, &b7));
        assert!(!hb.precedes(&b7, &LogPosition::new(ka.address.clone(), 3)));
    }

    #[test]
    fn without_receipts_only_intra_log_pairs() {
        let (ka, kb) = (key(1), key(2));
        let mut a = TamperLog::new(ka.address.clone());
        let mut b = TamperLog::new(kb.address.clone());
        push(&mut a, 3, 0);
        push(&mut b, 2, 0);
        let hb = derive_order((&ka.address, a.entries()), (&kb.address, b.entries()), &[]).unwrap();
        let pairs = hb.pairs();
        assert_eq!(pairs.len(), 3 + 1);
        assert!(pairs.iter().all(|(x, y)| x.log == y.log && x.index < y.index));
    }

    #[test]
    fn forged_receipt_is_rejected() {
        let (ka, kb) = (key(1), key(2));
        let mut a = TamperLog::new(ka.address.clone());
        let mut b = TamperLog::new(kb.address.clone());
        push(&mut b, 2, 0);
        let mut r = a.entangle(&b.authenticator(&kb).unwrap(), 0).unwrap();
        r.local_entry_index = 5;
        let err = derive_order((&ka.address, a.entries()), (&kb.address, b.entries()), &[r]);
        assert!(matches!(err, Err(OrderError::OutOfRange(_))));
    }

    #[test]
    fn mutual_receipts_chain_transitively() {
        let (ka, kb) = (key(1), key(2));
        let mut a = TamperLog::new(ka.address.clone());
        let mut b = TamperLog::new(kb.address.clone());
        push(&mut a, 2, 0);
        let r1 = b.entangle(&a.authenticator(&ka).unwrap(), 0).unwrap();
        push(&mut b, 1, 0);
        let r2 = a.entangle(&b.authenticator(&kb).unwrap(), 0).unwrap();
        push(&mut a, 1, 0);
        let hb = derive_order(
            (&ka.address, a.entries()),
            (&kb.address, b.entries()),
            &[r1, r2],
        )
        .unwrap();
        // a0 < b1 (via r1) and b1 < a3 (via r2) so a0 < a3 trivially, and a1 < b2 < a3.
        let a1 = LogPosition::new(ka.address.clone(), 1);
        let b1 = LogPosition::new(kb.address.clone(), 1);
        let a3 = LogPosition::new(ka.address.clone(), 3);
        assert!(hb.precedes(&a1, &b1));
        assert!(hb.precedes(&b1, &a3));
        let n = hb.pairs().len();
        let brute: usize = {
            let all: Vec<LogPosition> = (0..4)
                .map(|i| LogPosition::new(ka.address.clone(), i))
                .chain((0..2).map(|i| LogPosition::new(kb.address.clone(), i)))
                .collect();
            all.iter()
                .flat_map(|x| all.iter().map(move |y| (x, y)))
                .filter(|(x, y)| hb.precedes(x, y))
                .count()
        };
        assert_eq!(n, brute);
    }
}
