//! Fault specifications and the ground-truth registry of what was injected.

use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultTarget {
    Node(u32),
    /// Whichever node hosts the agent at injection time.
    Agent(AgentKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultMode {
    Crash,
    /// At its next seal the mint signs two different blocks and sends them
    /// to disjoint halves of the backbone.
    EquivocateBlock,
    /// At its next seal the mint silently drops one eligible acked tx.
    OmitAckedTx,
    /// The mint's next ack carries a timestamp earlier than its previous one.
    ForgeAckTimestamp,
    TamperLogEntry { index: u64 },
    CorruptReplicaByte { offset: u64 },
    Partition { nodes: Vec<u32>, duration_ms: i64 },
}

impl FaultMode {
    pub fn is_mint_fault(&self) -> bool {
        matches!(
            self,
            FaultMode::EquivocateBlock | FaultMode::OmitAckedTx | FaultMode::ForgeAckTimestamp
        )
    }

    pub fn label(&self) -> &'static str {
        match self {
            FaultMode::Crash => "crash",
            FaultMode::EquivocateBlock => "equivocate-block",
            FaultMode::OmitAckedTx => "omit-acked-tx",
            FaultMode::ForgeAckTimestamp => "forge-ack-timestamp",
            FaultMode::TamperLogEntry { .. } => "tamper-log-entry",
            FaultMode::CorruptReplicaByte { .. } => "corrupt-replica-byte",
            FaultMode::Partition { .. } => "partition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<FaultTarget>,
    pub mode: FaultMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultStatus {
    /// Applied to the target's state.
    Applied,
    /// Armed on the mint host; fires at its next ack or seal.
    Armed,
    /// An armed mint fault that fired.
    Fired,
    /// The target did not exist or was not live at injection time.
    TargetMissing,
}

/// One ground-truth record per scenario fault.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub index: usize,
    pub at_ms: i64,
    pub mode: FaultMode,
    pub node: Option<u32>,
    pub status: FaultStatus,
    /// Virtual time an armed fault fired.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fired_at_ms: Option<i64>,
    /// Height of the block an armed mint fault affected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shapes() {
        let f: FaultSpec = serde_json::from_str(
            r#"{"at_ms": 5, "target": {"node": 3}, "mode": {"kind": "tamper-log-entry", "index": 5}}"#,
        )
        .unwrap();
        assert_eq!(f.target, Some(FaultTarget::Node(3)));
        assert_eq!(f.mode, FaultMode::TamperLogEntry { index: 5 });
        let g: FaultSpec =
            serde_json::from_str(r#"{"at_ms": 5, "target": {"agent": "mint"}, "mode": {"kind": "equivocate-block"}}"#)
                .unwrap();
        assert!(g.mode.is_mint_fault());
        assert!(serde_json::from_str::<FaultSpec>(r#"{"at_ms": 5, "mode": {"kind": "melt"}}"#).is_err());
    }
}
