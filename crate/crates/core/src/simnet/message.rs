//! Wire messages exchanged by simulated nodes.

use serde::{Deserialize, Serialize};

use crate::agents::{AgentState, ProbeResponse};
use crate::codec::CanonicalWriter;
use crate::consensus::{CommitCertificate, Vote};
use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use crate::journal::{Activity, RejectReason};
use crate::ledger::{AckedTransaction, Block, Transaction};
use crate::tamper_log::{Authenticator, LogExport};

/// A sealed block as announced by the mint, signed over `(height, epoch,
/// hash)` and carrying the mint's log head for entanglement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedProposal {
    pub block: Block,
    pub epoch: u64,
    pub proposer: u32,
    pub mint_head: Authenticator,
    pub key: PublicKey,
    pub signature: Signature,
}

impl SignedProposal {
    fn signing_bytes(height: u64, epoch: u64, hash: &Digest) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("proposal");
        w.u64(height).u64(epoch).digest(hash);
        w.finish()
    }

    pub fn sign(block: Block, epoch: u64, proposer: u32, mint_head: Authenticator, key: &KeyPair) -> Self {
        let signature = crypto::sign(key, &Self::signing_bytes(block.height, epoch, &block.block_hash));
        SignedProposal {
            block,
            epoch,
            proposer,
            mint_head,
            key: key.public_key.clone(),
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        self.block.compute_hash() == self.block.block_hash
            && crypto::verify(
                &self.key,
                &Self::signing_bytes(self.block.height, self.epoch, &self.block.block_hash),
                &self.signature,
            )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitNotice {
    pub block: Block,
    pub cert: CommitCertificate,
    pub proposer: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "kebab-case")]
pub enum ReportKind {
    /// The proposal does not match the reporter's own rebuild.
    Mismatch { proposal: Box<SignedProposal> },
    /// No block for the last boundary arrived in time.
    Stalled { height: u64 },
    /// Two acks from one mint whose timestamps run backwards.
    AckOrder {
        earlier: Box<AckedTransaction>,
        later: Box<AckedTransaction>,
    },
    /// The reporter's uplink super peer went silent.
    SuperPeerSilent { sp: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "answer", rename_all = "kebab-case")]
pub enum AbandonAnswer {
    /// The responder had not confirmed anything and is now bound to abandon.
    Abandoned,
    /// The responder is already bound to a confirm vote.
    Voted { block_hash: Digest, vote: Box<Vote> },
    /// The responder already committed a block at that height.
    Committed { notice: Box<CommitNotice> },
}

/// Recovery's announcement of a new mint epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochStart {
    pub epoch: u64,
    /// Block to roll back if it is the receiver's tip.
    pub revert: Option<Digest>,
    pub mint_host: u32,
    /// The acked pool every node adopts for the new epoch.
    pub carried: Vec<AckedTransaction>,
    pub signer: u32,
    pub key: PublicKey,
    pub signature: Signature,
}

impl EpochStart {
    fn signing_bytes(epoch: u64, revert: Option<&Digest>, mint_host: u32, carried: &[AckedTransaction]) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("epoch-start");
        w.u64(epoch).digest(revert.unwrap_or(&Digest::ZERO)).u32(mint_host).u32(carried.len() as u32);
        for a in carried {
            w.digest(&a.tx.id).i64(a.ack_timestamp);
        }
        w.finish()
    }

    pub fn sign(
        epoch: u64,
        revert: Option<Digest>,
        mint_host: u32,
        carried: Vec<AckedTransaction>,
        signer: u32,
        key: &KeyPair,
    ) -> Self {
        let signature = crypto::sign(key, &Self::signing_bytes(epoch, revert.as_ref(), mint_host, &carried));
        EpochStart {
            epoch,
            revert,
            mint_host,
            carried,
            signer,
            key: key.public_key.clone(),
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        crypto::verify(
            &self.key,
            &Self::signing_bytes(self.epoch, self.revert.as_ref(), self.mint_host, &self.carried),
            &self.signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "msg", rename_all = "kebab-case")]
pub enum Msg {
    Submit {
        tx: Transaction,
        issuer: u32,
        attempt: u32,
        /// Hops already travelled when a stale mint host forwards it.
        prior_hops: u32,
    },
    Acked {
        acked: AckedTransaction,
        issuer: u32,
        epoch: u64,
        inbound_hops: u32,
        /// A repeat answer sent only to the issuer, not part of the ack stream.
        direct: bool,
    },
    Rejected {
        txid: Digest,
        reason: RejectReason,
        issuer: u32,
        inbound_hops: u32,
    },
    Proposal(Box<SignedProposal>),
    Confirm {
        height: u64,
        epoch: u64,
        block_hash: Digest,
        vote: Box<Vote>,
    },
    Commit(Box<CommitNotice>),
    Report {
        epoch: u64,
        kind: ReportKind,
    },
    LogRequest {
        investigation: u64,
    },
    LogReply {
        investigation: u64,
        export: Box<LogExport>,
        journal: Vec<Activity>,
    },
    AbandonRequest {
        investigation: u64,
        round: u32,
        height: u64,
        epoch: u64,
    },
    AbandonReply {
        investigation: u64,
        round: u32,
        answer: AbandonAnswer,
    },
    EpochStart(Box<EpochStart>),
    Handoff {
        state: Box<AgentState>,
        epoch: u64,
    },
    Probe {
        poll: u64,
        at_height: u64,
        offsets: Vec<u64>,
    },
    ProbeReply {
        poll: u64,
        response: Box<ProbeResponse>,
    },
    SyncRequest {
        from_height: u64,
    },
    SyncReply {
        notices: Vec<CommitNotice>,
    },
}

impl Msg {
    pub fn label(&self) -> &'static str {
        match self {
            Msg::Submit { .. } => "submit",
            Msg::Acked { .. } => "acked",
            Msg::Rejected { .. } => "rejected",
            Msg::Proposal(_) => "proposal",
            Msg::Confirm { .. } => "confirm",
            Msg::Commit(_) => "commit",
            Msg::Report { .. } => "report",
            Msg::LogRequest { .. } => "log-request",
            Msg::LogReply { .. } => "log-reply",
            Msg::AbandonRequest { .. } => "abandon-request",
            Msg::AbandonReply { .. } => "abandon-reply",
            Msg::EpochStart(_) => "epoch-start",
            Msg::Handoff { .. } => "handoff",
            Msg::Probe { .. } => "probe",
            Msg::ProbeReply { .. } => "probe-reply",
            Msg::SyncRequest { .. } => "sync-request",
            Msg::SyncReply { .. } => "sync-reply",
        }
    }

    pub fn tx_ref(&self) -> Option<Digest> {
        match self {
            Msg::Submit { tx, .. } => Some(tx.id),
            Msg::Acked { acked, .. } => Some(acked.tx.id),
            Msg::Rejected { txid, .. } => Some(*txid),
            _ => None,
        }
    }

    pub fn block_ref(&self) -> Option<(Digest, u64)> {
        match self {
            Msg::Proposal(p) => Some((p.block.block_hash, p.block.height)),
            Msg::Confirm {
                block_hash, height, ..
            } => Some((*block_hash, *height)),
            Msg::Commit(n) => Some((n.block.block_hash, n.block.height)),
            _ => None,
        }
    }

    /// Rough wire size in bytes, for bandwidth accounting.
    pub fn approx_size(&self) -> u64 {
        const TX: u64 = 250;
        const VOTE: u64 = 140;
        match self {
            Msg::Submit { .. } | Msg::Acked { .. } => TX + 150,
            Msg::Rejected { .. } => 80,
            Msg::Proposal(p) => 300 + TX * p.block.txs.len() as u64,
            Msg::Confirm { .. } => VOTE + 48,
            Msg::Commit(n) => 200 + TX * n.block.txs.len() as u64 + VOTE * n.cert.votes.len() as u64,
            Msg::Report { .. } => 200,
            Msg::LogRequest { .. } | Msg::SyncRequest { .. } => 24,
            Msg::LogReply { export, .. } => 200 + 180 * export.entries.len() as u64,
            Msg::AbandonRequest { .. } | Msg::AbandonReply { .. } => 200,
            Msg::EpochStart(e) => 200 + TX * e.carried.len() as u64,
            Msg::Handoff { state, .. } => 150 + state.payload.len() as u64,
            Msg::Probe { offsets, .. } => 24 + 8 * offsets.len() as u64,
            Msg::ProbeReply { response, .. } => {
                100 + response.bytes.len() as u64 + response.log.as_ref().map_or(0, |l| 180 * l.entries.len() as u64)
            }
            Msg::SyncReply { notices } => notices.iter().map(|n| 200 + TX * n.block.txs.len() as u64).sum(),
        }
    }
}
