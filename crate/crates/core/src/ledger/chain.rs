use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::crypto::{Address, Digest, KeyPair};
use crate::tamper_log::Authenticator;

use super::block::{block_subsidy, AckedTransaction, Block};
use super::tx::{validate_with_pending, InvalidReason, OutPoint, Transaction, TxKind, TxOut, ValidationResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtxoEntry {
    pub address: Address,
    pub amount: u64,
    pub created_height: u64,
    pub coinbase: bool,
}

/// Unspent outputs plus a record of which transaction spent each consumed one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtxoSet {
    unspent: BTreeMap<OutPoint, UtxoEntry>,
    spent: BTreeMap<OutPoint, Digest>,
}

impl UtxoSet {
    pub fn get(&self, op: &OutPoint) -> Option<&UtxoEntry> {
        self.unspent.get(op)
    }

    pub fn is_spent(&self, op: &OutPoint) -> bool {
        self.spent.contains_key(op)
    }

    pub fn insert(&mut self, op: OutPoint, entry: UtxoEntry) {
        self.unspent.insert(op, entry);
    }

    pub fn len(&self) -> usize {
        self.unspent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unspent.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OutPoint, &UtxoEntry)> {
        self.unspent.iter()
    }

    pub fn total_value(&self) -> u64 {
        self.unspent.values().map(|e| e.amount).sum()
    }

    pub fn owned_by<'a>(&'a self, address: &'a Address) -> impl Iterator<Item = (&'a OutPoint, &'a UtxoEntry)> {
        self.unspent.iter().filter(move |(_, e)| &e.address == address)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("block at height {got} does not extend head height {head} / hash")]
    BadLinkage { head: u64, got: u64 },
    #[error("block hash does not match its contents")]
    BadHash,
    #[error("block timestamp {got} does not follow head timestamp {head}")]
    BadTimestamp { head: i64, got: i64 },
    #[error("coinbase does not pay subsidy plus fees")]
    BadCoinbase,
    #[error("transactions are not in (ack timestamp, id) order")]
    Unsorted,
    #[error("transaction {index} invalid: {reason:?}")]
    InvalidBlockTx { index: usize, reason: InvalidReason },
    #[error("chain is empty")]
    EmptyChain,
}

/// One transaction's effect, kept so a block can be unwound exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TxUndo {
    txid: Digest,
    created: u32,
    consumed: Vec<(OutPoint, UtxoEntry)>,
}

/// The single non-forking chain and its UTXO fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    blocks: Vec<Block>,
    utxos: UtxoSet,
    undo: Vec<Vec<TxUndo>>,
}

impl Chain {
    /// Starts a chain from an axiomatic genesis block whose transactions are
    /// applied without validation.
    pub fn from_genesis(genesis: Block) -> Self {
        let mut chain = Chain {
            blocks: Vec::new(),
            utxos: UtxoSet::default(),
            undo: Vec::new(),
        };
        chain.apply(genesis);
        chain
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn utxos(&self) -> &UtxoSet {
        &self.utxos
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Height of the tip; genesis is 0.
    pub fn height(&self) -> u64 {
        self.blocks.last().map_or(0, |b| b.height)
    }

    pub fn block_at(&self, height: u64) -> Option<&Block> {
        let first = self.blocks.first()?.height;
        height
            .checked_sub(first)
            .and_then(|i| self.blocks.get(i as usize))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Checks that `block` may extend this chain without changing anything.
    pub fn check_block(&self, block: &Block) -> Result<(), ChainError> {
        let tip = self.tip().ok_or(ChainError::EmptyChain)?;
        if block.height != tip.height + 1 || block.prev_hash != tip.block_hash {
            return Err(ChainError::BadLinkage {
                head: tip.height,
                got: block.height,
            });
        }
        if block.compute_hash() != block.block_hash {
            return Err(ChainError::BadHash);
        }
        if block.timestamp <= tip.timestamp {
            return Err(ChainError::BadTimestamp {
                head: tip.timestamp,
                got: block.timestamp,
            });
        }
        let cb = &block.coinbase;
        let cb_ok = cb.kind == TxKind::Coinbase
            && cb.inputs.is_empty()
            && cb.nonce == block.height
            && cb.compute_id() == cb.id
            && cb.output_total() == Some(block.reward_total());
        if !cb_ok {
            return Err(ChainError::BadCoinbase);
        }
        if block
            .txs
            .windows(2)
            .any(|w| w[0].order_key() >= w[1].order_key())
        {
            return Err(ChainError::Unsorted);
        }
        let mut in_block = BTreeSet::new();
        for (index, a) in block.txs.iter().enumerate() {
            if let ValidationResult::Invalid(reason) =
                validate_with_pending(&a.tx, &self.utxos, block.height, &in_block)
            {
                return Err(ChainError::InvalidBlockTx { index, reason });
            }
            in_block.extend(a.tx.inputs.iter().copied());
        }
        Ok(())
    }

    pub fn append_block(&mut self, block: Block) -> Result<(), ChainError> {
        self.check_block(&block)?;
        self.apply(block);
        Ok(())
    }

    fn apply(&mut self, block: Block) {
        let mut undo = Vec::with_capacity(block.txs.len() + 1);
        let txs = std::iter::once(&block.coinbase).chain(block.txs.iter().map(|a| &a.tx));
        for tx in txs {
            let mut consumed = Vec::with_capacity(tx.inputs.len());
            for input in &tx.inputs {
                if let Some(entry) = self.utxos.unspent.remove(input) {
                    consumed.push((*input, entry));
                }
                self.utxos.spent.insert(*input, tx.id);
            }
            for (vout, out) in tx.outputs.iter().enumerate() {
                self.utxos.unspent.insert(
                    tx.outpoint(vout as u32),
                    UtxoEntry {
                        address: out.address.clone(),
                        amount: out.amount,
                        created_height: block.height,
                        coinbase: tx.kind == TxKind::Coinbase,
                    },
                );
            }
            undo.push(TxUndo {
                txid: tx.id,
                created: tx.outputs.len() as u32,
                consumed,
            });
        }
        self.undo.push(undo);
        self.blocks.push(block);
    }

    /// Unwinds the tip, restoring the UTXO set exactly, and returns the
    /// block's non-coinbase transactions for re-inclusion.
    pub fn revert_last_block(&mut self) -> Result<Vec<AckedTransaction>, ChainError> {
        let block = self.blocks.pop().ok_or(ChainError::EmptyChain)?;
        let undo = self.undo.pop().expect("undo tracks blocks");
        for u in undo.into_iter().rev() {
            for vout in 0..u.created {
                self.utxos.unspent.remove(&OutPoint { txid: u.txid, vout });
            }
            for (op, entry) in u.consumed {
                self.utxos.spent.remove(&op);
                self.utxos.unspent.insert(op, entry);
            }
        }
        Ok(block.txs)
    }

    /// Sum of subsidies over every block; equals the UTXO total because fees
    /// only move value into coinbases.
    pub fn issued_value(&self) -> u64 {
        self.blocks.iter().map(|b| block_subsidy(b.height)).sum()
    }

    /// One JSON object per line, one line per block.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&serde_json::to_string(b).expect("block serializes"));
            out.push('\n');
        }
        out
    }
}

/// Per-address value of stake-to-self transactions confirmed in blocks whose
/// timestamp falls in `window`.
pub fn stake_snapshot(chain: &Chain, window: Range<i64>) -> BTreeMap<Address, u64> {
    let mut out = BTreeMap::new();
    for b in chain.blocks() {
        if !window.contains(&b.timestamp) {
            continue;
        }
        for a in &b.txs {
            if a.tx.kind == TxKind::StakeToSelf {
                *out.entry(a.tx.issuer.clone()).or_insert(0) += a.tx.output_total().unwrap_or(0);
            }
        }
    }
    out
}

/// Genesis: a coinbase of `subsidy(0)` split into each staker's outputs (the
/// leftover goes to `reward_address`), immediately re-spent by one signed
/// stake-to-self transaction per staker so that every staker starts with
/// confirmed stake and spendable non-coinbase outputs.
pub fn genesis_block(
    stakers: &[(&KeyPair, u64)],
    utxos_per_node: usize,
    reward_address: &Address,
    authority: &KeyPair,
) -> Block {
    let pieces = utxos_per_node.max(1) as u64;
    let mut outputs = Vec::new();
    let mut allocated: u64 = 0;
    for (key, stake) in stakers {
        for i in 0..pieces {
            let base = stake / pieces;
            let amount = if i == pieces - 1 { stake - base * (pieces - 1) } else { base };
            outputs.push(TxOut {
                address: key.address.clone(),
                amount,
            });
        }
        allocated += stake;
    }
    let subsidy = block_subsidy(0);
    assert!(allocated <= subsidy, "genesis stakes exceed the height-0 subsidy");
    if subsidy > allocated {
        outputs.push(TxOut {
            address: reward_address.clone(),
            amount: subsidy - allocated,
        });
    }
    let coinbase = Transaction::coinbase(0, outputs, reward_address.clone());
    let auth = Authenticator::issue(authority, 0, crate::tamper_log::genesis_auth());
    let mut txs: Vec<AckedTransaction> = stakers
        .iter()
        .enumerate()
        .map(|(n, (key, _))| {
            let first = n as u64 * pieces;
            let inputs: Vec<OutPoint> = (first..first + pieces).map(|v| coinbase.outpoint(v as u32)).collect();
            let outs = (first..first + pieces)
                .map(|v| coinbase.outputs[v as usize].clone())
                .collect();
            AckedTransaction {
                tx: Transaction::signed(TxKind::StakeToSelf, inputs, outs, 0, 0, key),
                ack_timestamp: 0,
                mint_authenticator: auth.clone(),
            }
        })
        .collect();
    txs.sort_by_key(AckedTransaction::order_key);
    let mut block = Block {
        height: 0,
        prev_hash: Digest::ZERO,
        timestamp: 0,
        coinbase,
        txs,
        block_hash: Digest::ZERO,
    };
    block.block_hash = block.compute_hash();
    block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_with, Scheme};
    use crate::ledger::block::{build_block, MintPolicy};

    fn keys(n: u8) -> Vec<KeyPair> {
        (1..=n).map(|i| keygen_with(Scheme::HashDouble, &[i; 32])).collect()
    }

    fn setup() -> (Vec<KeyPair>, Chain, Address) {
        let ks = keys(3);
        let stakers: Vec<(&KeyPair, u64)> = ks.iter().map(|k| (k, 1_000_000)).collect();
        let reward = Address::from_label("reward");
        let authority = keygen_with(Scheme::HashDouble, &[99; 32]);
        let g = genesis_block(&stakers, 2, &reward, &authority);
        (ks, Chain::from_genesis(g), reward)
    }

    fn payment(chain: &Chain, k: &KeyPair, ts: i64) -> AckedTransaction {
        let (op, e) = chain.utxos().owned_by(&k.address).next().unwrap();
        let tx = Transaction::signed(
            TxKind::Payment,
            vec![*op],
            vec![TxOut {
                address: Address::from_label("shop"),
                amount: e.amount - 10,
            }],
            10,
            1,
            k,
        );
        AckedTransaction {
            tx,
            ack_timestamp: ts,
            mint_authenticator: Authenticator::issue(k, 0, Digest::ZERO),
        }
    }

    #[test]
    fn genesis_conserves_value_and_records_stake() {
        let (ks, chain, _) = setup();
        assert_eq!(chain.utxos().total_value(), block_subsidy(0));
        let stakes = stake_snapshot(&chain, 0..1);
        assert_eq!(stakes.len(), 3);
        assert!(ks.iter().all(|k| stakes[&k.address] == 1_000_000));
        assert_eq!(chain.utxos().owned_by(&ks[0].address).count(), 2);
    }

    #[test]
    fn append_then_revert_is_identity() {
        let (ks, mut chain, reward) = setup();
        let before = chain.clone();
        let txs: Vec<_> = ks.iter().enumerate().map(|(i, k)| payment(&chain, k, i as i64)).collect();
        let b = build_block(&txs, chain.tip().unwrap(), 600_000, &MintPolicy::default(), &reward).unwrap();
        chain.append_block(b).unwrap();
        assert_eq!(chain.utxos().total_value(), chain.issued_value());
        let released = chain.revert_last_block().unwrap();
        assert_eq!(released.len(), 3);
        let mut ids: Vec<_> = released.iter().map(|a| a.tx.id).collect();
        let mut want: Vec<_> = txs.iter().map(|a| a.tx.id).collect();
        ids.sort();
        want.sort();
        assert_eq!(ids, want);
        assert_eq!(chain, before);
    }

    #[test]
    fn wrong_prev_hash_is_bad_linkage() {
        let (_, mut chain, reward) = setup();
        let mut b = build_block(&[], chain.tip().unwrap(), 600_000, &MintPolicy::default(), &reward).unwrap();
        b.prev_hash = Digest::ZERO;
        b.block_hash = b.compute_hash();
        assert!(matches!(chain.append_block(b), Err(ChainError::BadLinkage { .. })));
    }

    #[test]
    fn double_spend_inside_a_block_is_rejected() {
        let (ks, mut chain, reward) = setup();
        let a = payment(&chain, &ks[0], 1);
        let mut b2 = a.clone();
        b2.tx = Transaction::signed(TxKind::Payment, a.tx.inputs.clone(), a.tx.outputs.clone(), a.tx.fee, 2, &ks[0]);
        b2.ack_timestamp = 2;
        let b = build_block(&[a, b2], chain.tip().unwrap(), 600_000, &MintPolicy::default(), &reward).unwrap();
        assert!(matches!(
            chain.append_block(b),
            Err(ChainError::InvalidBlockTx {
                index: 1,
                reason: InvalidReason::DoubleSpend
            })
        ));
    }

    #[test]
    fn revert_of_empty_chain_fails() {
        let (_, mut chain, _) = setup();
        chain.revert_last_block().unwrap();
        assert_eq!(chain.revert_last_block(), Err(ChainError::EmptyChain));
    }

    #[test]
    fn stake_window_excludes_stale_stake() {
        let (_, chain, _) = setup();
        assert!(stake_snapshot(&chain, 1..1_000).is_empty());
    }
}
