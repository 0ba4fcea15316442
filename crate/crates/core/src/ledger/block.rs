use serde::{Deserialize, Serialize};

use crate::codec::CanonicalWriter;
use crate::crypto::{hash, Address, Digest};
use crate::tamper_log::Authenticator;

use super::tx::{Transaction, TxKind, TxOut};

pub const INITIAL_SUBSIDY: u64 = 5_000_000_000;
pub const HALVING_INTERVAL: u64 = 210_000;

/// Bitcoin issuance schedule in satoshis.
pub fn block_subsidy(height: u64) -> u64 {
    let halvings = height / HALVING_INTERVAL;
    if halvings >= 64 {
        0
    } else {
        INITIAL_SUBSIDY >> halvings
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MintPolicy {
    pub block_interval_ms: i64,
    pub max_block_txs: usize,
    pub free_tx_fraction: f64,
}

impl Default for MintPolicy {
    fn default() -> Self {
        Self {
            block_interval_ms: 600_000,
            max_block_txs: 1000,
            free_tx_fraction: 0.05,
        }
    }
}

impl MintPolicy {
    /// `floor(free_tx_fraction * max_block_txs)`, tolerant of binary rounding
    /// (0.29 * 100 is 28.999... in f64).
    pub fn free_quota(&self) -> usize {
        (self.free_tx_fraction * self.max_block_txs as f64 + 1e-9).floor() as usize
    }

    /// Smallest seal boundary strictly after `time_ms`.
    pub fn next_seal_after(&self, time_ms: i64) -> i64 {
        (time_ms.div_euclid(self.block_interval_ms) + 1) * self.block_interval_ms
    }

    pub fn is_seal_time(&self, time_ms: i64) -> bool {
        time_ms > 0 && time_ms % self.block_interval_ms == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeRuleOutcome {
    Accepted,
    FreeQuotaExhausted,
}

/// Admits zero-fee transactions only while the block in progress holds fewer
/// than the free quota; fee-paying transactions always pass.
pub fn apply_free_transaction_rule(
    tx: &Transaction,
    zero_fee_in_block: usize,
    policy: &MintPolicy,
) -> FreeRuleOutcome {
    if tx.fee > 0 || zero_fee_in_block < policy.free_quota() {
        FreeRuleOutcome::Accepted
    } else {
        FreeRuleOutcome::FreeQuotaExhausted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckedTransaction {
    pub tx: Transaction,
    pub ack_timestamp: i64,
    pub mint_authenticator: Authenticator,
}

impl AckedTransaction {
    pub fn order_key(&self) -> (i64, Digest) {
        (self.ack_timestamp, self.tx.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: i64,
    pub coinbase: Transaction,
    pub txs: Vec<AckedTransaction>,
    pub block_hash: Digest,
}

impl Block {
    /// Canonical bytes covered by `block_hash`. Mint authenticators are
    /// excluded so that any rebuilder produces the same bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("block");
        w.u64(self.height)
            .digest(&self.prev_hash)
            .i64(self.timestamp)
            .digest(&self.coinbase.id)
            .u32(self.txs.len() as u32);
        for a in &self.txs {
            w.digest(&a.tx.id).i64(a.ack_timestamp);
        }
        w.finish()
    }

    pub fn compute_hash(&self) -> Digest {
        hash(&self.canonical_bytes())
    }

    pub fn fees(&self) -> u64 {
        self.txs.iter().map(|a| a.tx.fee).sum()
    }

    /// Subsidy plus fees, the value a coinbase must carry.
    pub fn reward_total(&self) -> u64 {
        block_subsidy(self.height) + self.fees()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("{got} transactions exceed the block capacity of {max}")]
    CapacityExceeded { got: usize, max: usize },
    #[error("fee total overflows")]
    FeeOverflow,
}

/// Deterministic block construction shared by the mint and every rebuilder.
pub fn build_block(
    acked: &[AckedTransaction],
    prev: &Block,
    timestamp: i64,
    policy: &MintPolicy,
    reward_address: &Address,
) -> Result<Block, BuildError> {
    if acked.len() > policy.max_block_txs {
        return Err(BuildError::CapacityExceeded {
            got: acked.len(),
            max: policy.max_block_txs,
        });
    }
    let mut txs = acked.to_vec();
    txs.sort_by_key(AckedTransaction::order_key);
    let height = prev.height + 1;
    let fees = txs
        .iter()
        .try_fold(0u64, |acc, a| acc.checked_add(a.tx.fee))
        .ok_or(BuildError::FeeOverflow)?;
    let coinbase = Transaction::coinbase(
        height,
        vec![TxOut {
            address: reward_address.clone(),
            amount: block_subsidy(height)
                .checked_add(fees)
                .ok_or(BuildError::FeeOverflow)?,
        }],
        reward_address.clone(),
    );
    let mut block = Block {
        height,
        prev_hash: prev.block_hash,
        timestamp,
        coinbase,
        txs,
        block_hash: Digest::ZERO,
    };
    block.block_hash = block.compute_hash();
    Ok(block)
}

/// The transactions a seal at `seal_time` takes from an acked pool: those
/// acknowledged strictly before the seal, in `(ack_timestamp, id)` order,
/// up to capacity. Later ones wait for the next cycle.
pub fn select_for_seal<'a, I>(pool: I, seal_time: i64, policy: &MintPolicy) -> Vec<AckedTransaction>
where
    I: IntoIterator<Item = &'a AckedTransaction>,
{
    let mut eligible: Vec<&AckedTransaction> = pool
        .into_iter()
        .filter(|a| a.ack_timestamp < seal_time && a.tx.kind != TxKind::Coinbase)
        .collect();
    eligible.sort_by_key(|a| a.order_key());
    eligible
        .into_iter()
        .take(policy.max_block_txs)
        .cloned()
        .collect()
}
