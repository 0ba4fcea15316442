//! Network-operations metrics snapshots.

use serde::{Deserialize, Serialize};

use crate::crypto::{Address, Digest};
use crate::overlay::NodeId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: u64,
    pub p50: i64,
    pub p90: i64,
    pub p99: i64,
    pub max: i64,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)`, 1-based.
pub fn nearest_rank(sorted: &[i64], p: f64) -> i64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl Percentiles {
    pub fn of(samples: &[i64]) -> Self {
        let mut v = samples.to_vec();
        v.sort_unstable();
        Percentiles {
            count: v.len() as u64,
            p50: nearest_rank(&v, 50.0),
            p90: nearest_rank(&v, 90.0),
            p99: nearest_rank(&v, 99.0),
            max: v.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisbehavingNode {
    pub node: NodeId,
    pub address: Address,
    /// Proposal id of the verdict or ban vote.
    pub verdict: Digest,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct NetopsInput<'a> {
    pub at_ms: i64,
    pub connected_nodes: usize,
    pub joins: u64,
    pub departures: u64,
    pub window_ms: i64,
    pub bytes_sent: u64,
    pub storage_bytes: u64,
    pub ack_round_trips_ms: &'a [i64],
    pub outages: u64,
    pub detected_attacks: u64,
    pub misbehaving: &'a [MisbehavingNode],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub at_ms: i64,
    pub connected_nodes: usize,
    /// Joins plus departures per simulated hour.
    pub churn_per_hour: f64,
    pub bandwidth_bytes: u64,
    pub storage_bytes: u64,
    pub ack_round_trip_ms: Percentiles,
    pub outages: u64,
    pub detected_attacks: u64,
    pub misbehaving: Vec<MisbehavingNode>,
}

pub fn netops_report(input: &NetopsInput<'_>) -> MetricsSnapshot {
    let hours = input.window_ms as f64 / 3_600_000.0;
    MetricsSnapshot {
        at_ms: input.at_ms,
        connected_nodes: input.connected_nodes,
        churn_per_hour: if hours > 0.0 {
            (input.joins + input.departures) as f64 / hours
        } else {
            0.0
        },
        bandwidth_bytes: input.bytes_sent,
        storage_bytes: input.storage_bytes,
        ack_round_trip_ms: Percentiles::of(input.ack_round_trips_ms),
        outages: input.outages,
        detected_attacks: input.detected_attacks,
        misbehaving: input.misbehaving.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_small_cases() {
        let v = [15, 20, 35, 40, 50];
        assert_eq!(nearest_rank(&v, 30.0), 20);
        assert_eq!(nearest_rank(&v, 40.0), 20);
        assert_eq!(nearest_rank(&v, 50.0), 35);
        assert_eq!(nearest_rank(&v, 100.0), 50);
        assert_eq!(nearest_rank(&[], 99.0), 0);
        assert_eq!(nearest_rank(&[7], 1.0), 7);
    }

    #[test]
    fn p99_of_hundred_samples() {
        let samples: Vec<i64> = (1..=100).rev().collect();
        let p = Percentiles::of(&samples);
        assert_eq!((p.p50, p.p90, p.p99, p.max, p.count), (50, 90, 99, 100, 100));
    }

    #[test]
    fn snapshot_carries_bans_and_churn() {
        let bans = [MisbehavingNode {
            node: NodeId(4),
            address: Address::from_label("x"),
            verdict: Digest::ZERO,
            reason: "equivocation".into(),
        }];
        let s = netops_report(&NetopsInput {
            connected_nodes: 49,
            joins: 1,
            departures: 2,
            window_ms: 7_200_000,
            misbehaving: &bans,
            ..NetopsInput::default()
        });
        assert_eq!(s.connected_nodes, 49);
        assert_eq!(s.churn_per_hour, 1.5);
        assert_eq!(s.misbehaving.len(), 1);
        assert!(serde_json::to_string(&s).unwrap().contains("equivocation"));
    }
}
