//! Per-node tamper-evident justification log.
//!
//! Every entry carries `authenticator = H(prev_authenticator || H(entry bytes))`
//! where the entry bytes are the canonical encoding of all fields except the
//! authenticator itself. Entry 0 chains from [`genesis_auth`]. A signed
//! [`Authenticator`] over the head lets peers entangle logs: recording a
//! remote head in the local log proves every remote entry up to that head
//! happened before every later local entry, independent of either clock.

mod order;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::codec::CanonicalWriter;
use crate::crypto::{self, hash, hash_parts, Address, Digest, KeyPair, PublicKey, Signature};

pub use order::{derive_order, derive_order_multi, HappensBefore, LogPosition, OrderError};

/// `hash("GENESIS")`, the predecessor of entry 0 in every log.
pub fn genesis_auth() -> Digest {
    static G: OnceLock<Digest> = OnceLock::new();
    *G.get_or_init(|| hash(b"GENESIS"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivityKind {
    IssueTx,
    ReceiveTx,
    AckTx,
    AcceptTx,
    RejectTx,
    NewBlockHash,
    Entangle,
    AgentHandoff,
    AuditProbe,
    Vote,
}

impl ActivityKind {
    pub fn tag(self) -> u8 {
        match self {
            ActivityKind::IssueTx => 1,
            ActivityKind::ReceiveTx => 2,
            ActivityKind::AckTx => 3,
            ActivityKind::AcceptTx => 4,
            ActivityKind::RejectTx => 5,
            ActivityKind::NewBlockHash => 6,
            ActivityKind::Entangle => 7,
            ActivityKind::AgentHandoff => 8,
            ActivityKind::AuditProbe => 9,
            ActivityKind::Vote => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: u64,
    pub local_timestamp: i64,
    pub activity_kind: ActivityKind,
    pub payload_digest: Digest,
    pub counterparty: Address,
    pub prev_authenticator: Digest,
    pub authenticator: Digest,
}

impl LogEntry {
    /// Canonical encoding of every field except `authenticator`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        w.u64(self.index)
            .i64(self.local_timestamp)
            .u8(self.activity_kind.tag())
            .digest(&self.payload_digest)
            .str(self.counterparty.as_str())
            .digest(&self.prev_authenticator);
        w.finish()
    }

    /// The authenticator this entry should carry given its other fields.
    pub fn expected_authenticator(&self) -> Digest {
        chain_step(&self.prev_authenticator, &self.canonical_bytes())
    }
}

pub(crate) fn chain_step(prev: &Digest, entry_bytes: &[u8]) -> Digest {
    let inner = hash(entry_bytes);
    hash_parts(&[prev.as_bytes(), inner.as_bytes()])
}

/// Signed statement "my log has `head_index + 1` entries ending in `head_digest`".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Authenticator {
    pub log_owner: Address,
    pub owner_key: PublicKey,
    pub head_index: u64,
    pub head_digest: Digest,
    pub signature: Signature,
}

impl Authenticator {
    pub fn signing_bytes(owner: &Address, head_index: u64, head_digest: &Digest) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("authenticator");
        w.str(owner.as_str()).u64(head_index).digest(head_digest);
        w.finish()
    }

    pub fn issue(key: &KeyPair, head_index: u64, head_digest: Digest) -> Self {
        let msg = Self::signing_bytes(&key.address, head_index, &head_digest);
        Authenticator {
            log_owner: key.address.clone(),
            owner_key: key.public_key.clone(),
            head_index,
            head_digest,
            signature: crypto::sign(key, &msg),
        }
    }

    /// Checks the signature and that the embedded key belongs to `log_owner`.
    pub fn verify(&self) -> bool {
        crypto::address_of(&self.owner_key) == self.log_owner
            && crypto::verify(
                &self.owner_key,
                &Self::signing_bytes(&self.log_owner, self.head_index, &self.head_digest),
                &self.signature,
            )
    }

    /// Unsigned stand-in used where only the transaction content matters,
    /// such as replaying a mint. Never verifies.
    pub fn placeholder(owner: Address) -> Self {
        Authenticator {
            log_owner: owner.clone(),
            owner_key: PublicKey {
                scheme: crypto::Scheme::default(),
                bytes: Vec::new(),
            },
            head_index: 0,
            head_digest: Digest::ZERO,
            signature: Signature {
                bytes: Vec::new(),
                signer: owner,
            },
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        w.raw(&Self::signing_bytes(&self.log_owner, self.head_index, &self.head_digest))
            .bytes(&self.signature.bytes);
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntanglementReceipt {
    pub local_owner: Address,
    pub local_entry_index: u64,
    pub remote_authenticator: Authenticator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    ChainBreak,
    HeadMismatch,
    SignatureInvalid,
    IndexGap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub first_bad_index: Option<u64>,
    pub reason: Option<FailureReason>,
}

impl VerificationReport {
    fn ok() -> Self {
        Self {
            ok: true,
            first_bad_index: None,
            reason: None,
        }
    }

    fn bad(index: u64, reason: FailureReason) -> Self {
        Self {
            ok: false,
            first_bad_index: Some(index),
            reason: Some(reason),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LogError {
    #[error("timestamp {got} precedes previous entry timestamp {previous}")]
    MonotonicityViolation { previous: i64, got: i64 },
    #[error("remote authenticator signature does not verify")]
    BadSignature,
}

/// Append-only log owned by one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperLog {
    owner: Address,
    entries: Vec<LogEntry>,
}

impl TamperLog {
    pub fn new(owner: Address) -> Self {
        Self {
            owner,
            entries: Vec::new(),
        }
    }

    pub fn owner(&self) -> &Address {
        &self.owner
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head_digest(&self) -> Digest {
        self.entries
            .last()
            .map_or_else(genesis_auth, |e| e.authenticator)
    }

    pub fn append(
        &mut self,
        activity_kind: ActivityKind,
        payload_digest: Digest,
        counterparty: Address,
        local_timestamp: i64,
    ) -> Result<&LogEntry, LogError> {
        if let Some(last) = self.entries.last() {
            if local_timestamp < last.local_timestamp {
                return Err(LogError::MonotonicityViolation {
                    previous: last.local_timestamp,
                    got: local_timestamp,
                });
            }
        }
        let mut entry = LogEntry {
            index: self.entries.len() as u64,
            local_timestamp,
            activity_kind,
            payload_digest,
            counterparty,
            prev_authenticator: self.head_digest(),
            authenticator: Digest::ZERO,
        };
        entry.authenticator = entry.expected_authenticator();
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Signed head, or `None` for an empty log.
    pub fn authenticator(&self, key: &KeyPair) -> Option<Authenticator> {
        let last = self.entries.last()?;
        Some(Authenticator::issue(key, last.index, last.authenticator))
    }

    /// Records `remote`'s head in this log. On a bad signature the log is
    /// left untouched.
    pub fn entangle(
        &mut self,
        remote: &Authenticator,
        local_timestamp: i64,
    ) -> Result<EntanglementReceipt, LogError> {
        if !remote.verify() {
            return Err(LogError::BadSignature);
        }
        let idx = self
            .append(
                ActivityKind::Entangle,
                remote.head_digest,
                remote.log_owner.clone(),
                local_timestamp,
            )?
            .index;
        Ok(EntanglementReceipt {
            local_owner: self.owner.clone(),
            local_entry_index: idx,
            remote_authenticator: remote.clone(),
        })
    }

    /// Mutable access for fault injection only.
    pub fn entries_mut_for_fault_injection(&mut self) -> &mut Vec<LogEntry> {
        &mut self.entries
    }

    pub fn export(&self, head: Option<Authenticator>) -> LogExport {
        LogExport {
            owner: self.owner.clone(),
            head,
            entries: self.entries.clone(),
        }
    }
}

/// Recomputes the whole chain and checks it against a claimed signed head.
///
/// Chain faults are reported at the first entry where recomputation diverges.
/// A head that disagrees with an otherwise intact chain is reported at the
/// first index the two disagree about: the first missing (or surplus) entry,
/// or the claimed head index when lengths agree.
pub fn verify_log(entries: &[LogEntry], claimed_head: &Authenticator) -> VerificationReport {
    if let Some(report) = verify_chain(entries) {
        return report;
    }
    if !claimed_head.verify() {
        return VerificationReport::bad(claimed_head.head_index, FailureReason::SignatureInvalid);
    }
    let claimed_len = claimed_head.head_index + 1;
    let actual_len = entries.len() as u64;
    if actual_len != claimed_len {
        return VerificationReport::bad(
            actual_len.min(claimed_len),
            FailureReason::HeadMismatch,
        );
    }
    let last = entries.last().expect("claimed_len >= 1");
    if last.authenticator != claimed_head.head_digest {
        return VerificationReport::bad(claimed_head.head_index, FailureReason::HeadMismatch);
    }
    VerificationReport::ok()
}

/// Chain-only check with no head claim. `None` means the chain is intact.
pub fn verify_chain(entries: &[LogEntry]) -> Option<VerificationReport> {
    let mut prev = genesis_auth();
    for (i, e) in entries.iter().enumerate() {
        let i = i as u64;
        if e.index != i {
            return Some(VerificationReport::bad(i, FailureReason::IndexGap));
        }
        if e.prev_authenticator != prev || e.expected_authenticator() != e.authenticator {
            return Some(VerificationReport::bad(i, FailureReason::ChainBreak));
        }
        prev = e.authenticator;
    }
    None
}

/// JSON export format read back by `verify-log`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogExport {
    pub owner: Address,
    pub head: Option<Authenticator>,
    pub entries: Vec<LogEntry>,
}

impl LogExport {
    /// Verifies against the embedded head; without one only the chain is checked.
    pub fn verify(&self) -> VerificationReport {
        match &self.head {
            Some(head) => verify_log(&self.entries, head),
            None => verify_chain(&self.entries).unwrap_or_else(VerificationReport::ok),
        }
    }
}
