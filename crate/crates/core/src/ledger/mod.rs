//! Simplified UTXO ledger: transactions, deterministic block construction,
//! the single non-forking chain, the subsidy schedule and stake snapshots.

mod block;
mod chain;
mod tx;

pub use block::{
    apply_free_transaction_rule, block_subsidy, build_block, select_for_seal, AckedTransaction, Block,
    BuildError, FreeRuleOutcome, MintPolicy, HALVING_INTERVAL, INITIAL_SUBSIDY,
};
pub use chain::{genesis_block, stake_snapshot, Chain, ChainError, UtxoEntry, UtxoSet};
pub use tx::{
    validate_transaction, validate_with_pending, InvalidReason, OutPoint, Transaction, TxKind, TxOut,
    ValidationResult, COINBASE_MATURITY,
};

use std::collections::BTreeMap;

use crate::crypto::Address;

/// One simulated week, the default stake solicitation window.
pub const STAKE_WINDOW_MS: i64 = 7 * 24 * 3_600_000;

/// Stakes in force at `now`: the current window's snapshot, or the previous
/// window's while the current one has no stake-to-self confirmations yet.
pub fn active_stakes(chain: &Chain, now: i64, window_ms: i64) -> BTreeMap<Address, u64> {
    let start = now.div_euclid(window_ms) * window_ms;
    let current = stake_snapshot(chain, start..start + window_ms);
    if !current.is_empty() || start == 0 {
        return current;
    }
    stake_snapshot(chain, start - window_ms..start)
}
