//! Per-node state inside the simulator.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::agents::MintCore;
use crate::consensus::Vote;
use crate::crypto::{Address, Digest, KeyPair};
use crate::journal::Activity;
use crate::ledger::{AckedTransaction, Block, Chain, OutPoint, Transaction};
use crate::tamper_log::{EntanglementReceipt, TamperLog};

use super::fault::FaultMode;
use super::message::{CommitNotice, SignedProposal};

/// What a node has promised for one `(height, epoch)`.
#[derive(Debug, Clone)]
pub(crate) enum Binding {
    Confirm { hash: Digest, vote: Vote },
    Abandon,
}

/// The mint role while hosted here.
pub(crate) struct MintRole {
    pub core: MintCore,
    pub epoch: u64,
    pub proposal: Option<Rc<SignedProposal>>,
    /// The second block of an equivocation, if one is outstanding.
    pub twin: Option<Rc<SignedProposal>>,
    pub votes: BTreeMap<Digest, Vec<Vote>>,
    pub last_ack_ts: Option<i64>,
}

impl MintRole {
    pub fn new(core: MintCore, epoch: u64) -> Self {
        MintRole {
            core,
            epoch,
            proposal: None,
            twin: None,
            votes: BTreeMap::new(),
            last_ack_ts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IssueState {
    Submitted,
    Acked,
    Included,
    Rejected,
    Dropped,
}

/// A transaction issued by this node.
pub(crate) struct Issued {
    pub tx: Transaction,
    pub attempt: u32,
    pub state: IssueState,
}

pub(crate) struct Node {
    pub id: u32,
    pub key: KeyPair,
    pub alive: bool,
    pub banned: bool,
    pub byzantine: bool,
    pub skew: i64,
    pub log: TamperLog,
    pub journal: Vec<Activity>,
    pub receipts: Vec<EntanglementReceipt>,
    pub chain: Chain,
    /// Certificate for each committed height; index 0 is genesis.
    pub notices: Vec<Option<Rc<CommitNotice>>>,
    pub committed: BTreeSet<Digest>,
    pub epoch: u64,
    /// When the current epoch was adopted.
    pub epoch_at: i64,
    pub pool: BTreeMap<Digest, AckedTransaction>,
    pub stashed_acks: Vec<(u64, AckedTransaction)>,
    pub stashed_proposals: Vec<Rc<SignedProposal>>,
    pub bindings: BTreeMap<(u64, u64), Binding>,
    pub seen_proposals: BTreeMap<Digest, Rc<SignedProposal>>,
    /// Latest ack seen per mint log owner.
    pub last_ack: BTreeMap<Address, (i64, AckedTransaction)>,
    pub mint: Option<MintRole>,
    /// Submissions that reached this node while it was about to become mint.
    pub buffered: Vec<(Transaction, u32, u32, u32)>,
    pub uplink: Option<u32>,
    pub last_rx: i64,
    pub issued: BTreeMap<Digest, Issued>,
    pub locked: BTreeSet<OutPoint>,
    pub nonce: u64,
    /// Replica byte offsets that read back flipped.
    pub corrupt: BTreeSet<u64>,
    /// Mint faults waiting for this node to act as mint: (fault index, mode).
    pub armed: Vec<(usize, FaultMode)>,
}

impl Node {
    pub fn new(id: u32, key: KeyPair, genesis: Block, skew: i64, byzantine: bool) -> Self {
        let log = TamperLog::new(key.address.clone());
        Node {
            id,
            key,
            alive: true,
            banned: false,
            byzantine,
            skew,
            log,
            journal: Vec::new(),
            receipts: Vec::new(),
            committed: genesis.txs.iter().map(|a| a.tx.id).collect(),
            chain: Chain::from_genesis(genesis),
            notices: vec![None],
            epoch: 0,
            epoch_at: 0,
            pool: BTreeMap::new(),
            stashed_acks: Vec::new(),
            stashed_proposals: Vec::new(),
            bindings: BTreeMap::new(),
            seen_proposals: BTreeMap::new(),
            last_ack: BTreeMap::new(),
            mint: None,
            buffered: Vec::new(),
            uplink: None,
            last_rx: 0,
            issued: BTreeMap::new(),
            locked: BTreeSet::new(),
            nonce: 0,
            corrupt: BTreeSet::new(),
            armed: Vec::new(),
        }
    }

    pub fn addr(&self) -> &Address {
        &self.key.address
    }

    pub fn active(&self) -> bool {
        self.alive && !self.banned
    }

    pub fn local_time(&self, now: i64) -> i64 {
        now + self.skew
    }

    /// Appends to the log and keeps the activity for replay.
    pub fn record(&mut self, now: i64, counterparty: &Address, activity: Activity) -> u64 {
        let ts = self.local_time(now).max(self.log.entries().last().map_or(i64::MIN, |e| e.local_timestamp));
        let idx = self
            .log
            .append(activity.kind(), activity.payload_digest(), counterparty.clone(), ts)
            .expect("timestamp clamped to be monotone")
            .index;
        self.journal.push(activity);
        idx
    }

    /// Entangles a remote head; bad signatures are ignored.
    pub fn entangle(&mut self, now: i64, remote: &crate::tamper_log::Authenticator) {
        let ts = self.local_time(now).max(self.log.entries().last().map_or(i64::MIN, |e| e.local_timestamp));
        if let Ok(r) = self.log.entangle(remote, ts) {
            self.receipts.push(r);
            self.journal.push(Activity::Entangle { remote: remote.clone() });
        }
    }

    pub fn tip_hash(&self) -> Digest {
        self.chain.tip().expect("chain has genesis").block_hash
    }

    pub fn tip_epoch(&self) -> u64 {
        self.notices.last().and_then(|n| n.as_ref()).map_or(0, |n| n.cert.epoch)
    }

    /// Drops pool entries that are committed or spend a spent output.
    pub fn prune_pool(&mut self) {
        let utxos = self.chain.utxos();
        let committed = &self.committed;
        self.pool.retain(|id, a| !committed.contains(id) && a.tx.inputs.iter().all(|i| utxos.get(i).is_some()));
    }
}
