//! Records a run produces.

use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, AuditFinding, DividendSet, FaultReport, MetricsSnapshot, RecoveryPlan};
use crate::crypto::{Address, Digest};
use crate::journal::Activity;
use crate::ledger::Chain;
use crate::overlay::Topology;
use crate::tamper_log::{EntanglementReceipt, LogExport};

use super::fault::FaultRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxStatus {
    Submitted,
    Acked,
    Included,
    Rejected,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub txid: Digest,
    pub issuer: u32,
    pub fee: u64,
    pub issued_at_ms: i64,
    pub attempts: u32,
    /// When the issuer first received the acknowledgment.
    pub acked_at_ms: Option<i64>,
    pub ack_timestamp: Option<i64>,
    /// Hops out to the mint plus hops back, for the first acknowledgment.
    pub round_trip_hops: Option<u32>,
    pub status: TxStatus,
    pub included_height: Option<u64>,
    pub included_at_ms: Option<i64>,
    pub reject_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealRecord {
    pub at_ms: i64,
    pub host: u32,
    pub height: u64,
    pub epoch: u64,
    pub block_hash: Digest,
    pub tx_count: usize,
    /// Hash of the conflicting second block, if the mint equivocated.
    pub twin: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebuildRecord {
    pub node: u32,
    pub super_peer: bool,
    pub height: u64,
    pub epoch: u64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub at_ms: i64,
    pub node: u32,
    pub height: u64,
    pub epoch: u64,
    pub block_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevertRecord {
    pub at_ms: i64,
    pub node: u32,
    pub height: u64,
    pub block_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub at_ms: i64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub at_ms: i64,
    pub auditor: AgentKind,
    pub target: u32,
    pub finding: AuditFinding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanRecord {
    pub at_ms: i64,
    pub node: u32,
    pub address: Address,
    pub replaced_by: Option<u32>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub investigation: u64,
    pub started_ms: i64,
    pub concluded_ms: i64,
    pub trigger: String,
    pub suspect: u32,
    /// proven, crashed, resync or inconclusive.
    pub outcome: String,
    pub evidence: Option<String>,
    pub fault: Option<FaultReport>,
    pub plan: Option<RecoveryPlan>,
    pub new_epoch: Option<u64>,
    pub new_mint: Option<u32>,
    pub reverted: Option<(u64, Digest)>,
    pub carried: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub at_ms: i64,
    pub reason: String,
    pub topology: Topology,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: u32,
    pub address: Address,
    pub super_peer: bool,
    pub byzantine: bool,
    pub alive: bool,
    pub banned: bool,
    pub height: u64,
    pub tip: Digest,
    pub epoch: u64,
    pub log_len: usize,
    pub log_head: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLog {
    pub id: u32,
    pub export: LogExport,
    pub journal: Vec<Activity>,
    pub receipts: Vec<EntanglementReceipt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub trace_digest: Digest,
    pub trace_records: u64,
    pub final_height: u64,
    pub sealed: usize,
    pub txs_issued: usize,
    pub txs_included: usize,
    pub rebuild_checks: usize,
    pub rebuild_mismatches: usize,
    pub violations: Vec<Violation>,
    pub recoveries: usize,
    pub bans: usize,
    pub captured_heights: Vec<u64>,
    pub warnings: Vec<String>,
}

/// Everything a run produces.
pub struct RunOutput {
    pub trace_digest: Digest,
    pub trace_lines: Option<Vec<String>>,
    pub trace_records: u64,
    pub final_chain: Chain,
    pub seals: Vec<SealRecord>,
    pub rebuilds: Vec<RebuildRecord>,
    pub commits: Vec<CommitRecord>,
    pub reverts: Vec<RevertRecord>,
    pub txs: Vec<TxRecord>,
    pub nodes: Vec<NodeSummary>,
    pub violations: Vec<Violation>,
    pub dividends: Vec<DividendSet>,
    pub metrics: Vec<MetricsSnapshot>,
    pub faults: Vec<FaultRecord>,
    pub findings: Vec<FindingRecord>,
    pub bans: Vec<BanRecord>,
    pub recoveries: Vec<RecoveryRecord>,
    pub topologies: Vec<TopologySnapshot>,
    pub logs: Vec<NodeLog>,
    /// Heights whose certificate carries no honest vote.
    pub captured_heights: Vec<u64>,
    pub warnings: Vec<String>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations_of(&self, invariant: &str) -> usize {
        self.violations.iter().filter(|v| v.invariant == invariant).count()
    }

    pub fn tx(&self, txid: &Digest) -> Option<&TxRecord> {
        self.txs.iter().find(|t| t.txid == *txid)
    }
}
