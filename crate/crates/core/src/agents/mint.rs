//! The mint: acknowledges submissions, timestamps them in arrival order and
//! seals a block at every interval boundary.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::consensus::{ReferenceBehavior, StepResult};
use crate::crypto::{Address, Digest};
use crate::journal::{Activity, BlockEvent, HandoffDirection, RejectReason};
use crate::ledger::{
    apply_free_transaction_rule, build_block, validate_with_pending, AckedTransaction, Block, BuildError, Chain,
    FreeRuleOutcome, MintPolicy, OutPoint, Transaction, TxKind, ValidationResult,
};
use crate::tamper_log::Authenticator;

use super::AgentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum AckDecision {
    Accept { ack_timestamp: i64 },
    /// Resubmission of a transaction the mint already holds.
    AlreadyAcked { ack_timestamp: i64 },
    Reject { reason: RejectReason },
}

/// Deterministic mint state. Serializable so it can travel in a handoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MintCore {
    policy: MintPolicy,
    reward_address: Address,
    /// Acked, not yet sealed, sorted by `(ack_timestamp, id)`.
    pending: Vec<AckedTransaction>,
    /// Sealed and announced, awaiting a commit certificate.
    proposed: Option<Block>,
}

/// Block contents for a seal: the eligible pool in `(ack_timestamp, id)`
/// order, skipping anything no longer valid against `chain`, up to capacity.
/// Full nodes call this on their own pool to rebuild the mint's block.
pub fn select_valid_for_seal<'a, I>(pool: I, chain: &Chain, seal_time: i64, policy: &MintPolicy) -> Vec<AckedTransaction>
where
    I: IntoIterator<Item = &'a AckedTransaction>,
{
    let mut eligible: Vec<&AckedTransaction> = pool
        .into_iter()
        .filter(|a| a.ack_timestamp < seal_time && a.tx.kind != TxKind::Coinbase)
        .collect();
    eligible.sort_by_key(|a| a.order_key());
    eligible.dedup_by_key(|a| a.tx.id);
    let height = chain.height() + 1;
    let mut spent = BTreeSet::new();
    let mut out = Vec::new();
    for a in eligible {
        if out.len() == policy.max_block_txs {
            break;
        }
        if validate_with_pending(&a.tx, chain.utxos(), height, &spent).is_valid() {
            spent.extend(a.tx.inputs.iter().copied());
            out.push(a.clone());
        }
    }
    out
}

impl MintCore {
    pub fn new(policy: MintPolicy, reward_address: Address) -> Self {
        MintCore {
            policy,
            reward_address,
            pending: Vec::new(),
            proposed: None,
        }
    }

    pub fn policy(&self) -> &MintPolicy {
        &self.policy
    }

    pub fn reward_address(&self) -> &Address {
        &self.reward_address
    }

    pub fn pending(&self) -> &[AckedTransaction] {
        &self.pending
    }

    pub fn proposed(&self) -> Option<&Block> {
        self.proposed.as_ref()
    }

    fn held(&self) -> impl Iterator<Item = &AckedTransaction> {
        self.pending
            .iter()
            .chain(self.proposed.iter().flat_map(|b| b.txs.iter()))
    }

    fn in_flight(&self) -> BTreeSet<OutPoint> {
        self.held().flat_map(|a| a.tx.inputs.iter().copied()).collect()
    }

    /// Validation plus the free-transaction rule for one arrival. Pure.
    pub fn decide(&self, chain: &Chain, tx: &Transaction, arrival_ms: i64) -> AckDecision {
        if let Some(a) = self.held().find(|a| a.tx.id == tx.id) {
            return AckDecision::AlreadyAcked {
                ack_timestamp: a.ack_timestamp,
            };
        }
        if let ValidationResult::Invalid(reason) =
            validate_with_pending(tx, chain.utxos(), chain.height() + 1, &self.in_flight())
        {
            return AckDecision::Reject {
                reason: RejectReason::Invalid(reason),
            };
        }
        // Zero-fee count of the block this arrival would land in.
        let max = self.policy.max_block_txs.max(1);
        let slot_start = (self.pending.len() / max) * max;
        let zero_fee = self.pending[slot_start..].iter().filter(|a| a.tx.fee == 0).count();
        match apply_free_transaction_rule(tx, zero_fee, &self.policy) {
            FreeRuleOutcome::Accepted => AckDecision::Accept {
                ack_timestamp: arrival_ms,
            },
            FreeRuleOutcome::FreeQuotaExhausted => AckDecision::Reject {
                reason: RejectReason::FreeQuotaExhausted,
            },
        }
    }

    /// The acked copy of `txid`, pending or proposed.
    pub fn find(&self, txid: &Digest) -> Option<&AckedTransaction> {
        self.held().find(|a| a.tx.id == *txid)
    }

    /// Removes a pending transaction without sealing it.
    pub fn drop_pending(&mut self, txid: &Digest) -> Option<AckedTransaction> {
        let pos = self.pending.iter().position(|a| a.tx.id == *txid)?;
        Some(self.pending.remove(pos))
    }

    pub fn admit(&mut self, acked: AckedTransaction) {
        let key = acked.order_key();
        let pos = self.pending.partition_point(|a| a.order_key() < key);
        self.pending.insert(pos, acked);
    }

    /// Seals the next block on top of `chain`, or `None` while an earlier
    /// proposal still awaits its certificate.
    pub fn seal(&mut self, chain: &Chain, seal_time: i64) -> Option<Result<Block, BuildError>> {
        if self.proposed.is_some() {
            return None;
        }
        let prev = chain.tip()?;
        let selected = select_valid_for_seal(&self.pending, chain, seal_time, &self.policy);
        let block = match build_block(&selected, prev, seal_time, &self.policy, &self.reward_address) {
            Ok(b) => b,
            Err(e) => return Some(Err(e)),
        };
        let chosen: BTreeSet<Digest> = selected.iter().map(|a| a.tx.id).collect();
        self.pending.retain(|a| !chosen.contains(&a.tx.id));
        self.proposed = Some(block.clone());
        Some(Ok(block))
    }

    /// A block was committed at the next height (normally our proposal).
    pub fn on_commit(&mut self, block: &Block) {
        let included: BTreeSet<Digest> = block.txs.iter().map(|a| a.tx.id).collect();
        if let Some(p) = self.proposed.take() {
            if p.block_hash != block.block_hash {
                for a in p.txs {
                    if !included.contains(&a.tx.id) {
                        self.admit(a);
                    }
                }
            }
        }
        self.pending.retain(|a| !included.contains(&a.tx.id));
    }

    /// The last block was rolled back; its transactions return with their
    /// original acknowledgment timestamps.
    pub fn on_revert(&mut self, released: Vec<AckedTransaction>) {
        self.proposed = None;
        for a in released {
            if !self.pending.iter().any(|p| p.tx.id == a.tx.id) {
                self.admit(a);
            }
        }
    }

    /// Drops an outstanding proposal that will never be certified; its
    /// transactions return to the pending set.
    pub fn abandon_proposal(&mut self) {
        if let Some(p) = self.proposed.take() {
            for a in p.txs {
                self.admit(a);
            }
        }
    }
}

/// Reference mint for replay attestation. Starts inactive, picks up state
/// from incoming mint handoffs, and follows the log's commits using `blocks`.
pub struct MintReplay<'a> {
    core: Option<MintCore>,
    chain: Chain,
    blocks: &'a BTreeMap<Digest, Block>,
    expected: VecDeque<Activity>,
    owner: Address,
    incomplete: bool,
}

impl<'a> MintReplay<'a> {
    pub fn new(genesis_chain: Chain, blocks: &'a BTreeMap<Digest, Block>, owner: Address) -> Self {
        MintReplay {
            core: None,
            chain: genesis_chain,
            blocks,
            expected: VecDeque::new(),
            owner,
            incomplete: false,
        }
    }

    /// True if a logged commit named a block missing from the store, in
    /// which case later verdicts are not trustworthy.
    pub fn incomplete(&self) -> bool {
        self.incomplete
    }
}

impl ReferenceBehavior for MintReplay<'_> {
    fn step(&mut self, activity: &Activity) -> StepResult {
        match activity {
            Activity::AgentHandoff { direction, state } if state.kind == AgentKind::Mint => {
                match direction {
                    HandoffDirection::Incoming => match state.decode::<MintCore>() {
                        Ok(core) => self.core = Some(core),
                        Err(_) => return StepResult::Mismatch,
                    },
                    HandoffDirection::Outgoing => self.core = None,
                }
                self.expected.clear();
                StepResult::Input
            }
            Activity::ReceiveTx { tx, arrival_ms } => {
                let Some(core) = &self.core else {
                    return StepResult::Input;
                };
                let decision = core.decide(&self.chain, tx, *arrival_ms);
                let out = match decision {
                    AckDecision::Accept { ack_timestamp } | AckDecision::AlreadyAcked { ack_timestamp } => {
                        Activity::AcceptTx {
                            txid: tx.id,
                            ack_timestamp,
                        }
                    }
                    AckDecision::Reject { reason } => Activity::RejectTx { txid: tx.id, reason },
                };
                if let AckDecision::Accept { ack_timestamp } = decision {
                    self.core.as_mut().expect("checked").admit(AckedTransaction {
                        tx: tx.clone(),
                        ack_timestamp,
                        mint_authenticator: Authenticator::placeholder(self.owner.clone()),
                    });
                }
                self.expected.push_back(out);
                StepResult::Input
            }
            Activity::AcceptTx { .. } | Activity::RejectTx { .. } => {
                if self.core.is_none() {
                    return StepResult::Mismatch;
                }
                match self.expected.pop_front() {
                    Some(e) if &e == activity => StepResult::Match,
                    _ => StepResult::Mismatch,
                }
            }
            Activity::NewBlockHash {
                event,
                height,
                block_hash,
                timestamp,
                ..
            } => match event {
                BlockEvent::Sealed => {
                    let Some(core) = self.core.as_mut() else {
                        return StepResult::Mismatch;
                    };
                    match core.seal(&self.chain, *timestamp) {
                        Some(Ok(b)) if b.block_hash == *block_hash && b.height == *height => StepResult::Match,
                        _ => StepResult::Mismatch,
                    }
                }
                BlockEvent::Committed => {
                    match self.blocks.get(block_hash) {
                        Some(b) if self.chain.append_block(b.clone()).is_ok() => {
                            if let Some(core) = self.core.as_mut() {
                                core.on_commit(b);
                            }
                        }
                        _ => self.incomplete = true,
                    }
                    StepResult::Input
                }
                BlockEvent::Reverted => {
                    if self.chain.tip().map(|t| t.block_hash) == Some(*block_hash) {
                        if let Ok(released) = self.chain.revert_last_block() {
                            if let Some(core) = self.core.as_mut() {
                                core.on_revert(released);
                            }
                        }
                    }
                    StepResult::Input
                }
                BlockEvent::Rebuilt => StepResult::Input,
            },
            _ => StepResult::Input,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{handoff, AgentState};
    use crate::consensus::{replay_attest, ReplayOutcome};
    use crate::crypto::{keygen_with, KeyPair, Scheme};
    use crate::ledger::{genesis_block, TxOut};
    use crate::overlay::NodeId;
    use crate::tamper_log::TamperLog;

    struct World {
        keys: Vec<KeyPair>,
        chain: Chain,
        reward: Address,
    }

    fn world() -> World {
        let keys: Vec<KeyPair> = (1..=4).map(|i| keygen_with(Scheme::HashDouble, &[i; 32])).collect();
        let stakers: Vec<(&KeyPair, u64)> = keys.iter().map(|k| (k, 100_000)).collect();
        let reward = Address::from_label("reward");
        let auth = keygen_with(Scheme::HashDouble, &[77; 32]);
        let chain = Chain::from_genesis(genesis_block(&stakers, 3, &reward, &auth));
        World { keys, chain, reward }
    }

    fn pay(w: &World, who: usize, pick: usize, fee: u64) -> Transaction {
        let k = &w.keys[who];
        let (op, e) = w.chain.utxos().owned_by(&k.address).nth(pick).unwrap();
        Transaction::signed(
            TxKind::Payment,
            vec![*op],
            vec![TxOut {
                address: w.keys[(who + 1) % w.keys.len()].address.clone(),
                amount: e.amount - fee,
            }],
            fee,
            pick as u64,
            k,
        )
    }

    /// Host-side driver: log every activity and apply it to the core.
    struct Host {
        key: KeyPair,
        log: TamperLog,
        acts: Vec<Activity>,
        core: MintCore,
    }

    impl Host {
        fn record(&mut self, a: Activity, ts: i64) {
            self.log
                .append(a.kind(), a.payload_digest(), Address::from_label("peer"), ts)
                .unwrap();
            self.acts.push(a);
        }

        fn receive(&mut self, chain: &Chain, tx: &Transaction, at: i64) -> AckDecision {
            self.record(Activity::ReceiveTx { tx: tx.clone(), arrival_ms: at }, at);
            let d = self.core.decide(chain, tx, at);
            match d {
                AckDecision::Accept { ack_timestamp } => {
                    self.record(Activity::AcceptTx { txid: tx.id, ack_timestamp }, at);
                    let auth = self.log.authenticator(&self.key).unwrap();
                    self.core.admit(AckedTransaction {
                        tx: tx.clone(),
                        ack_timestamp,
                        mint_authenticator: auth,
                    });
                }
                AckDecision::AlreadyAcked { ack_timestamp } => {
                    self.record(Activity::AcceptTx { txid: tx.id, ack_timestamp }, at);
                }
                AckDecision::Reject { reason } => {
                    self.record(Activity::RejectTx { txid: tx.id, reason }, at);
                }
            }
            d
        }

        fn seal(&mut self, chain: &Chain, at: i64) -> Block {
            let b = self.core.seal(chain, at).unwrap().unwrap();
            self.record(
                Activity::NewBlockHash {
                    event: BlockEvent::Sealed,
                    height: b.height,
                    epoch: 0,
                    block_hash: b.block_hash,
                    timestamp: at,
                },
                at,
            );
            b
        }

        fn commit(&mut self, chain: &mut Chain, b: &Block, at: i64) {
            chain.append_block(b.clone()).unwrap();
            self.core.on_commit(b);
            self.record(
                Activity::NewBlockHash {
                    event: BlockEvent::Committed,
                    height: b.height,
                    epoch: 0,
                    block_hash: b.block_hash,
                    timestamp: at,
                },
                at,
            );
        }
    }

    fn host(w: &World, policy: MintPolicy) -> Host {
        let key = keygen_with(Scheme::HashDouble, &[50; 32]);
        let core = MintCore::new(policy, w.reward.clone());
        let mut h = Host {
            log: TamperLog::new(key.address.clone()),
            acts: Vec::new(),
            core: core.clone(),
            key: key.clone(),
        };
        let state = AgentState::genesis(AgentKind::Mint, NodeId(0), &core, &key);
        h.record(
            Activity::AgentHandoff {
                direction: HandoffDirection::Incoming,
                state,
            },
            0,
        );
        h
    }

    #[test]
    fn valid_fee_paying_tx_is_accepted_with_arrival_timestamp() {
        let w = world();
        let mut h = host(&w, MintPolicy::default());
        let tx = pay(&w, 0, 0, 10);
        assert_eq!(h.receive(&w.chain, &tx, 1234), AckDecision::Accept { ack_timestamp: 1234 });
        assert_eq!(h.core.pending().len(), 1);
        assert!(h.core.pending()[0].mint_authenticator.verify());
        assert_eq!(h.receive(&w.chain, &tx, 2000), AckDecision::AlreadyAcked { ack_timestamp: 1234 });
    }

    #[test]
    fn conflicting_spend_is_rejected_as_double_spend() {
        let w = world();
        let mut h = host(&w, MintPolicy::default());
        let a = pay(&w, 0, 0, 10);
        let mut b = pay(&w, 0, 0, 20);
        b.nonce = 99;
        b = Transaction::signed(b.kind, b.inputs, b.outputs, b.fee, 99, &w.keys[0]);
        h.receive(&w.chain, &a, 1);
        assert!(matches!(h.receive(&w.chain, &b, 2), AckDecision::Reject { .. }));
    }

    #[test]
    fn schedule_boundary_and_overflow_to_next_cycle() {
        let w = world();
        let policy = MintPolicy {
            max_block_txs: 2,
            free_tx_fraction: 1.0,
            ..MintPolicy::default()
        };
        let mut h = host(&w, policy);
        let mut chain = w.chain.clone();
        for (i, who) in [0usize, 1, 2].iter().enumerate() {
            let tx = pay(&w, *who, 0, 5);
            h.receive(&chain, &tx, 100 + i as i64);
        }
        let b1 = h.seal(&chain, 600_000);
        assert_eq!(b1.height, 1);
        assert_eq!(b1.txs.len(), 2);
        h.commit(&mut chain, &b1, 600_500);
        let b2 = h.seal(&chain, 1_200_000);
        assert_eq!(b2.txs.len(), 1, "third tx awaits the following cycle");
        assert_eq!(b2.txs[0].ack_timestamp, 102);
    }

    #[test]
    fn free_quota_rejects_surplus_zero_fee() {
        let w = world();
        let policy = MintPolicy {
            max_block_txs: 20,
            free_tx_fraction: 0.05,
            ..MintPolicy::default()
        };
        let mut h = host(&w, policy);
        let first = pay(&w, 0, 0, 0);
        let second = pay(&w, 1, 0, 0);
        let paid = pay(&w, 2, 0, 1);
        assert!(matches!(h.receive(&w.chain, &first, 1), AckDecision::Accept { .. }));
        assert_eq!(
            h.receive(&w.chain, &second, 2),
            AckDecision::Reject {
                reason: RejectReason::FreeQuotaExhausted
            }
        );
        assert!(matches!(h.receive(&w.chain, &paid, 3), AckDecision::Accept { .. }));
    }

    #[test]
    fn honest_mint_log_replays_clean() {
        let w = world();
        let mut h = host(&w, MintPolicy::default());
        let mut chain = w.chain.clone();
        let mut store = BTreeMap::new();
        for round in 0..3usize {
            for who in 0..4 {
                let tx = pay(&w, who, round, 3);
                h.receive(&chain, &tx, round as i64 * 600_000 + 1_000 + who as i64);
            }
            let t = (round as i64 + 1) * 600_000;
            let b = h.seal(&chain, t);
            store.insert(b.block_hash, b.clone());
            h.commit(&mut chain, &b, t + 400);
        }
        let mut reference = MintReplay::new(w.chain.clone(), &store, h.key.address.clone());
        assert_eq!(replay_attest(h.log.entries(), &h.acts, &mut reference), ReplayOutcome::Matches);
    }

    #[test]
    fn omitted_tx_diverges_at_the_seal_entry() {
        let w = world();
        let mut h = host(&w, MintPolicy::default());
        let chain = w.chain.clone();
        for who in 0..3 {
            h.receive(&chain, &pay(&w, who, 0, 3), 10 + who as i64);
        }
        // Misbehaving host drops one acked tx before sealing.
        h.core.pending.remove(1);
        let b = h.seal(&chain, 600_000);
        assert_eq!(b.txs.len(), 2);
        let store = BTreeMap::new();
        let mut reference = MintReplay::new(w.chain.clone(), &store, h.key.address.clone());
        let seal_index = h.acts.len() as u64 - 1;
        assert_eq!(
            replay_attest(h.log.entries(), &h.acts, &mut reference),
            ReplayOutcome::Diverges { index: seal_index }
        );
    }

    #[test]
    fn forged_ack_timestamp_diverges() {
        let w = world();
        let mut h = host(&w, MintPolicy::default());
        let chain = w.chain.clone();
        h.receive(&chain, &pay(&w, 0, 0, 3), 500);
        let tx = pay(&w, 1, 0, 3);
        h.record(Activity::ReceiveTx { tx: tx.clone(), arrival_ms: 700 }, 700);
        h.record(Activity::AcceptTx { txid: tx.id, ack_timestamp: 499 }, 700);
        let store = BTreeMap::new();
        let mut reference = MintReplay::new(w.chain.clone(), &store, h.key.address.clone());
        let idx = h.acts.len() as u64 - 1;
        assert_eq!(
            replay_attest(h.log.entries(), &h.acts, &mut reference),
            ReplayOutcome::Diverges { index: idx }
        );
    }

    #[test]
    fn migrated_mint_seals_the_same_block() {
        let w = world();
        let mut stay = MintCore::new(MintPolicy::default(), w.reward.clone());
        let (a, b) = (keygen_with(Scheme::HashDouble, &[60; 32]), keygen_with(Scheme::HashDouble, &[61; 32]));
        for who in 0..4 {
            let tx = pay(&w, who, 0, 2);
            if let AckDecision::Accept { ack_timestamp } = stay.decide(&w.chain, &tx, 40 + who as i64) {
                stay.admit(AckedTransaction {
                    tx,
                    ack_timestamp,
                    mint_authenticator: Authenticator::placeholder(a.address.clone()),
                });
            }
        }
        let s0 = AgentState::genesis(AgentKind::Mint, NodeId(1), &stay, &a);
        let s1 = handoff(&s0, &stay, NodeId(2), &a);
        crate::agents::accept_handoff(&s1, Some(0)).unwrap();
        let mut moved: MintCore = s1.decode().unwrap();
        let s2 = handoff(&s1, &moved, NodeId(3), &b);
        let mut moved_twice: MintCore = s2.decode().unwrap();
        let x = stay.seal(&w.chain, 600_000).unwrap().unwrap();
        let y = moved.seal(&w.chain, 600_000).unwrap().unwrap();
        let z = moved_twice.seal(&w.chain, 600_000).unwrap().unwrap();
        assert_eq!(x, y);
        assert_eq!(x, z);
    }
}
