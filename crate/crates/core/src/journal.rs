//! Structured activities recorded alongside each log entry.
//!
//! A log entry stores only the digest of its activity. Nodes keep the full
//! activity next to the log so that peers can replay the node's behavior
//! from logged inputs and compare against logged outputs.

use serde::{Deserialize, Serialize};

use crate::agents::AgentState;
use crate::codec::CanonicalWriter;
use crate::crypto::{hash, Address, Digest};
use crate::ledger::{InvalidReason, Transaction};
use crate::tamper_log::{ActivityKind, Authenticator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Invalid(InvalidReason),
    FreeQuotaExhausted,
}

impl RejectReason {
    fn tag(self) -> u8 {
        match self {
            RejectReason::FreeQuotaExhausted => 0,
            RejectReason::Invalid(r) => 1 + r as u8,
        }
    }

    pub fn label(self) -> String {
        match self {
            RejectReason::FreeQuotaExhausted => "free-quota-exhausted".into(),
            RejectReason::Invalid(r) => serde_json::to_value(r)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockEvent {
    /// The mint sealed this block.
    Sealed,
    /// A node rebuilt the block from its own acked pool.
    Rebuilt,
    /// A certificate arrived and the block was appended.
    Committed,
    /// The block was rolled back by recovery.
    Reverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HandoffDirection {
    Outgoing,
    Incoming,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "activity", rename_all = "kebab-case")]
pub enum Activity {
    IssueTx {
        tx: Transaction,
    },
    /// Mint input: a submission and its consensus-time arrival.
    ReceiveTx {
        tx: Transaction,
        arrival_ms: i64,
    },
    /// Issuer-side record of the mint's answer.
    AckTx {
        txid: Digest,
        accepted: bool,
        ack_timestamp: Option<i64>,
    },
    AcceptTx {
        txid: Digest,
        ack_timestamp: i64,
    },
    RejectTx {
        txid: Digest,
        reason: RejectReason,
    },
    NewBlockHash {
        event: BlockEvent,
        height: u64,
        epoch: u64,
        block_hash: Digest,
        timestamp: i64,
    },
    Entangle {
        remote: Authenticator,
    },
    AgentHandoff {
        direction: HandoffDirection,
        state: AgentState,
    },
    AuditProbe {
        target: Address,
        at_height: u64,
        offsets: Vec<u64>,
    },
    Vote {
        proposal_id: Digest,
        yes: bool,
    },
}

impl Activity {
    pub fn kind(&self) -> ActivityKind {
        match self {
            Activity::IssueTx { .. } => ActivityKind::IssueTx,
            Activity::ReceiveTx { .. } => ActivityKind::ReceiveTx,
            Activity::AckTx { .. } => ActivityKind::AckTx,
            Activity::AcceptTx { .. } => ActivityKind::AcceptTx,
            Activity::RejectTx { .. } => ActivityKind::RejectTx,
            Activity::NewBlockHash { .. } => ActivityKind::NewBlockHash,
            Activity::Entangle { .. } => ActivityKind::Entangle,
            Activity::AgentHandoff { .. } => ActivityKind::AgentHandoff,
            Activity::AuditProbe { .. } => ActivityKind::AuditProbe,
            Activity::Vote { .. } => ActivityKind::Vote,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("activity");
        w.u8(self.kind().tag());
        match self {
            Activity::IssueTx { tx } => {
                w.digest(&tx.id);
            }
            Activity::ReceiveTx { tx, arrival_ms } => {
                w.digest(&tx.id).i64(*arrival_ms);
            }
            Activity::AckTx {
                txid,
                accepted,
                ack_timestamp,
            } => {
                w.digest(txid).bool(*accepted).i64(ack_timestamp.unwrap_or(i64::MIN));
            }
            Activity::AcceptTx { txid, ack_timestamp } => {
                w.digest(txid).i64(*ack_timestamp);
            }
            Activity::RejectTx { txid, reason } => {
                w.digest(txid).u8(reason.tag());
            }
            Activity::NewBlockHash {
                event,
                height,
                epoch,
                block_hash,
                timestamp,
            } => {
                w.u8(*event as u8)
                    .u64(*height)
                    .u64(*epoch)
                    .digest(block_hash)
                    .i64(*timestamp);
            }
            Activity::Entangle { remote } => {
                w.raw(&remote.canonical_bytes());
            }
            Activity::AgentHandoff { direction, state } => {
                w.u8(*direction as u8).raw(&state.canonical_bytes());
            }
            Activity::AuditProbe {
                target,
                at_height,
                offsets,
            } => {
                w.str(target.as_str()).u64(*at_height).u32(offsets.len() as u32);
                for o in offsets {
                    w.u64(*o);
                }
            }
            Activity::Vote { proposal_id, yes } => {
                w.digest(proposal_id).bool(*yes);
            }
        }
        w.finish()
    }

    /// Digest stored in the log entry. Entangle entries carry the remote head
    /// digest itself so receipts can be checked against the entry directly.
    pub fn payload_digest(&self) -> Digest {
        match self {
            Activity::Entangle { remote } => remote.head_digest,
            _ => hash(&self.canonical_bytes()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_separate_variants() {
        let a = Activity::Vote {
            proposal_id: Digest::ZERO,
            yes: true,
        };
        let b = Activity::Vote {
            proposal_id: Digest::ZERO,
            yes: false,
        };
        assert_ne!(a.payload_digest(), b.payload_digest());
        assert_eq!(a.kind(), ActivityKind::Vote);
    }

    #[test]
    fn reject_reason_labels() {
        assert_eq!(RejectReason::FreeQuotaExhausted.label(), "free-quota-exhausted");
        assert_eq!(RejectReason::Invalid(InvalidReason::DoubleSpend).label(), "double-spend");
    }
}
