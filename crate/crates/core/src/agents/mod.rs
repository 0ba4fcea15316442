//! Nomadic singleton agents and their signed state handoff.
//!
//! Agent code never moves; only the serialized state does. A departing host
//! signs `(kind, sequence, payload)` and the receiving host resumes from the
//! payload after checking the signature.

pub mod audit;
pub mod mint;
pub mod netops;
pub mod recovery;
pub mod rewards;

pub use audit::{
    audit_poll, check_response, probe_offsets, secondary_sample, AuditFinding, ChainImage, FindingKind, ProbeResponse,
    ProbeTarget,
};
pub use mint::{select_valid_for_seal, AckDecision, MintCore, MintReplay};
pub use netops::{nearest_rank, netops_report, MetricsSnapshot, MisbehavingNode, NetopsInput, Percentiles};
pub use recovery::{recover, FaultReport, RecoveryAction, RecoveryError, RecoveryPlan, SystemView};
pub use rewards::{
    distribute_rewards, split_block_reward, DividendSet, RewardPolicy, RewardRecipients, RewardShares, BLOCKS_PER_DAY,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::CanonicalWriter;
use crate::crypto::{self, KeyPair, PublicKey, Signature};
use crate::overlay::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Mint,
    Configuration,
    Seed,
    Reward,
    AuditPrimary,
    AuditSecondary,
    Recovery,
    Netops,
    Provisioning,
}

impl AgentKind {
    /// Singleton kinds in placement order. Seed agents run on every super peer.
    pub const SINGLETONS: [AgentKind; 8] = [
        AgentKind::Mint,
        AgentKind::Configuration,
        AgentKind::Recovery,
        AgentKind::AuditPrimary,
        AgentKind::AuditSecondary,
        AgentKind::Reward,
        AgentKind::Netops,
        AgentKind::Provisioning,
    ];

    fn tag(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Mint => "mint",
            AgentKind::Configuration => "configuration",
            AgentKind::Seed => "seed",
            AgentKind::Reward => "reward",
            AgentKind::AuditPrimary => "audit-primary",
            AgentKind::AuditSecondary => "audit-secondary",
            AgentKind::Recovery => "recovery",
            AgentKind::Netops => "netops",
            AgentKind::Provisioning => "provisioning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub kind: AgentKind,
    pub host: NodeId,
    pub sequence: u64,
    /// Canonical JSON of the agent's process state.
    pub payload: String,
    pub signer_key: PublicKey,
    pub signature: Signature,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HandoffError {
    #[error("handoff signature does not verify")]
    BadHandoffSignature,
    #[error("handoff sequence {got} does not follow {expected}")]
    StaleSequence { expected: u64, got: u64 },
    #[error("payload is not valid state JSON: {0}")]
    BadPayload(String),
}

impl AgentState {
    pub fn signing_bytes(kind: AgentKind, sequence: u64, payload: &str) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("agent-state");
        w.u8(kind.tag()).u64(sequence).str(payload);
        w.finish()
    }

    /// Initial state at placement, signed by the first host.
    pub fn genesis<T: Serialize>(kind: AgentKind, host: NodeId, state: &T, key: &KeyPair) -> Self {
        let payload = serde_json::to_string(state).expect("agent state serializes");
        Self::signed(kind, host, 0, payload, key)
    }

    fn signed(kind: AgentKind, host: NodeId, sequence: u64, payload: String, key: &KeyPair) -> Self {
        let signature = crypto::sign(key, &Self::signing_bytes(kind, sequence, &payload));
        AgentState {
            kind,
            host,
            sequence,
            payload,
            signer_key: key.public_key.clone(),
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        crypto::address_of(&self.signer_key) == self.signature.signer
            && crypto::verify(
                &self.signer_key,
                &Self::signing_bytes(self.kind, self.sequence, &self.payload),
                &self.signature,
            )
    }

    pub fn decode<T: for<'de> Deserialize<'de>>(&self) -> Result<T, HandoffError> {
        serde_json::from_str(&self.payload).map_err(|e| HandoffError::BadPayload(e.to_string()))
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        w.raw(&Self::signing_bytes(self.kind, self.sequence, &self.payload))
            .u32(self.host.0)
            .bytes(&self.signature.bytes);
        w.finish()
    }
}

/// Serializes fresh process state for the move to `next_host`, signed by the
/// departing host.
pub fn handoff<T: Serialize>(
    previous: &AgentState,
    state: &T,
    next_host: NodeId,
    departing: &KeyPair,
) -> AgentState {
    let payload = serde_json::to_string(state).expect("agent state serializes");
    AgentState::signed(previous.kind, next_host, previous.sequence + 1, payload, departing)
}

/// Receiving side: rejects bad signatures and non-increasing sequences.
pub fn accept_handoff(state: &AgentState, last_sequence: Option<u64>) -> Result<(), HandoffError> {
    if !state.verify() {
        return Err(HandoffError::BadHandoffSignature);
    }
    if let Some(last) = last_sequence {
        if state.sequence != last + 1 {
            return Err(HandoffError::StaleSequence {
                expected: last + 1,
                got: state.sequence,
            });
        }
    }
    Ok(())
}

/// Round-robin placement of singleton agents over the super peers in
/// ascending id order.
pub fn initial_placement(super_peers: &[NodeId]) -> BTreeMap<AgentKind, NodeId> {
    AgentKind::SINGLETONS
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, super_peers[i % super_peers.len()]))
        .collect()
}
