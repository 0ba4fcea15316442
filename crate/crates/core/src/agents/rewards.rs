//! Daily dividend distribution by the reward agent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::consensus::StakeTable;
use crate::crypto::Address;
use crate::ledger::Chain;

/// Blocks per dividend day.
pub const BLOCKS_PER_DAY: u64 = 144;

const PPB: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardPolicy {
    pub mint_fraction: f64,
    pub superpeer_fraction: f64,
    pub opcost_fraction: f64,
    pub stake_fraction: f64,
}

impl Default for RewardPolicy {
    fn default() -> Self {
        RewardPolicy {
            mint_fraction: 0.05,
            superpeer_fraction: 0.25,
            opcost_fraction: 0.20,
            stake_fraction: 0.50,
        }
    }
}

/// Fractions as parts per billion; the stake share absorbs rounding so the
/// four always sum to exactly one billion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardShares {
    pub mint: u64,
    pub superpeer: u64,
    pub opcost: u64,
    pub stake: u64,
}

impl RewardPolicy {
    pub fn is_valid(&self) -> bool {
        let f = [self.mint_fraction, self.superpeer_fraction, self.opcost_fraction, self.stake_fraction];
        f.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)) && (f.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }

    pub fn shares(&self) -> RewardShares {
        let ppb = |x: f64| (x * PPB as f64).round() as u64;
        let mint = ppb(self.mint_fraction);
        let superpeer = ppb(self.superpeer_fraction);
        let opcost = ppb(self.opcost_fraction);
        RewardShares {
            mint,
            superpeer,
            opcost,
            stake: PPB.saturating_sub(mint + superpeer + opcost),
        }
    }
}

/// Who gets paid for a day. `mint_by_height` names the mint host address at
/// each sealed height; heights missing from it pay `default_mint`.
#[derive(Debug, Clone, Default)]
pub struct RewardRecipients {
    pub default_mint: Option<Address>,
    pub mint_by_height: BTreeMap<u64, Address>,
    pub super_peers: Vec<Address>,
    pub full_nodes: Vec<Address>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DividendSet {
    pub day: u64,
    pub first_height: u64,
    pub last_height: u64,
    pub block_count: u64,
    /// Σ (subsidy + fees) over the day's blocks.
    pub block_total: u64,
    pub carried_in: u64,
    pub carried_out: u64,
    pub mint_total: u64,
    pub payouts: BTreeMap<Address, u64>,
}

impl DividendSet {
    pub fn paid_total(&self) -> u64 {
        self.payouts.values().sum()
    }
}

fn part(total: u64, ppb: u64) -> u64 {
    (total as u128 * ppb as u128 / PPB as u128) as u64
}

fn credit(payouts: &mut BTreeMap<Address, u64>, a: &Address, amount: u64) {
    if amount > 0 {
        *payouts.entry(a.clone()).or_default() += amount;
    }
}

/// Splits `pool` over `stakes` proportionally. Returns the amount left by
/// flooring, or the whole pool when no stake is offered.
fn split_by_stake(pool: u64, stakes: &StakeTable, payouts: &mut BTreeMap<Address, u64>) -> u64 {
    if stakes.total() == 0 {
        return pool;
    }
    let mut paid = 0u64;
    for (a, &s) in stakes.entries() {
        let amt = (pool as u128 * s as u128 / stakes.total() as u128) as u64;
        credit(payouts, a, amt);
        paid += amt;
    }
    pool - paid
}

fn split_equal(pool: u64, to: &[Address], payouts: &mut BTreeMap<Address, u64>) -> u64 {
    if to.is_empty() {
        return pool;
    }
    let each = pool / to.len() as u64;
    for a in to {
        credit(payouts, a, each);
    }
    pool - each * to.len() as u64
}

/// One block's split. Returns `(mint share, unassigned remainder)`.
pub fn split_block_reward(
    total: u64,
    shares: &RewardShares,
    mint: Option<&Address>,
    recipients: &RewardRecipients,
    stakes: &StakeTable,
    payouts: &mut BTreeMap<Address, u64>,
) -> (u64, u64) {
    let mut mint_share = part(total, shares.mint);
    match mint {
        Some(m) => credit(payouts, m, mint_share),
        None => mint_share = 0,
    }
    let sp_pool = part(total, shares.superpeer);
    let op_pool = part(total, shares.opcost);
    let stake_pool = total - mint_share - sp_pool - op_pool;
    let mut rest = split_equal(sp_pool, &recipients.super_peers, payouts);
    rest += split_equal(op_pool, &recipients.full_nodes, payouts);
    rest += split_by_stake(stake_pool, stakes, payouts);
    (mint_share, rest)
}

/// Distributes the rewards of day `day` (heights `day*144+1 ..= day*144+144`;
/// genesis is never paid out). Flooring remainders go to the largest staker;
/// with no stake offered they carry over to the next day.
pub fn distribute_rewards(
    chain: &Chain,
    day: u64,
    stakes: &StakeTable,
    policy: &RewardPolicy,
    recipients: &RewardRecipients,
    carried_in: u64,
) -> DividendSet {
    let first = day * BLOCKS_PER_DAY + 1;
    let last = first + BLOCKS_PER_DAY - 1;
    let shares = policy.shares();
    let mut set = DividendSet {
        day,
        first_height: first,
        last_height: last,
        carried_in,
        ..DividendSet::default()
    };
    let mut rest = 0u64;
    for block in chain.blocks().iter().filter(|b| (first..=last).contains(&b.height)) {
        let total = block.reward_total();
        let mint = recipients
            .mint_by_height
            .get(&block.height)
            .or(recipients.default_mint.as_ref());
        let (m, r) = split_block_reward(total, &shares, mint, recipients, stakes, &mut set.payouts);
        set.mint_total += m;
        rest += r;
        set.block_total += total;
        set.block_count += 1;
    }
    let leftover = rest + carried_in;
    match stakes.largest() {
        Some(top) => credit(&mut set.payouts, top, leftover),
        None => set.carried_out = leftover,
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_with, Scheme};
    use crate::ledger::{build_block, genesis_block, MintPolicy};

    fn addr(s: &str) -> Address {
        Address::from_label(s)
    }

    fn table(pairs: &[(&str, u64)]) -> StakeTable {
        StakeTable::new(pairs.iter().map(|(a, s)| (addr(a), *s)).collect())
    }

    fn recipients(sp: usize, fn_: usize) -> RewardRecipients {
        RewardRecipients {
            default_mint: Some(addr("mint")),
            mint_by_height: BTreeMap::new(),
            super_peers: (0..sp).map(|i| addr(&format!("sp{i}"))).collect(),
            full_nodes: (0..fn_).map(|i| addr(&format!("fn{i}"))).collect(),
        }
    }

    #[test]
    fn worked_split_to_the_satoshi() {
        let policy = RewardPolicy {
            mint_fraction: 0.1,
            superpeer_fraction: 0.2,
            opcost_fraction: 0.2,
            stake_fraction: 0.5,
        };
        let r = recipients(2, 4);
        let stakes = table(&[("A", 75), ("B", 25)]);
        let mut payouts = BTreeMap::new();
        let (m, rest) = split_block_reward(100_000_000, &policy.shares(), r.default_mint.as_ref(), &r, &stakes, &mut payouts);
        assert_eq!((m, rest), (10_000_000, 0));
        // Oracle: integer arithmetic done by hand.
        let total: u64 = 100_000_000;
        assert_eq!(payouts[&addr("mint")], total / 10);
        for i in 0..2 {
            assert_eq!(payouts[&addr(&format!("sp{i}"))], total * 2 / 10 / 2);
        }
        for i in 0..4 {
            assert_eq!(payouts[&addr(&format!("fn{i}"))], total * 2 / 10 / 4);
        }
        assert_eq!(payouts[&addr("A")], total / 2 * 75 / 100);
        assert_eq!(payouts[&addr("B")], total / 2 * 25 / 100);
    }

    #[test]
    fn shares_always_sum_to_one_billion() {
        let s = RewardPolicy::default().shares();
        assert_eq!(s.mint + s.superpeer + s.opcost + s.stake, PPB);
        assert_eq!(s.mint, 50_000_000);
        assert!(RewardPolicy::default().is_valid());
        assert!(!RewardPolicy {
            mint_fraction: 0.5,
            ..RewardPolicy::default()
        }
        .is_valid());
    }

    fn day_chain(blocks: u64) -> Chain {
        let k = keygen_with(Scheme::HashDouble, &[3; 32]);
        let reward = addr("reward");
        let mut chain = Chain::from_genesis(genesis_block(&[(&k, 1_000)], 2, &reward, &k));
        let policy = MintPolicy::default();
        for h in 1..=blocks {
            let b = build_block(&[], chain.tip().unwrap(), h as i64 * 600_000, &policy, &reward).unwrap();
            chain.append_block(b).unwrap();
        }
        chain
    }

    #[test]
    fn day_window_conserves_value_with_awkward_counts() {
        let chain = day_chain(150);
        let stakes = table(&[("A", 7), ("B", 5), ("C", 1)]);
        let set = distribute_rewards(&chain, 0, &stakes, &RewardPolicy::default(), &recipients(3, 7), 0);
        assert_eq!(set.block_count, 144);
        assert_eq!(set.first_height, 1);
        assert_eq!(set.paid_total(), set.block_total);
        assert_eq!(set.carried_out, 0);
        let next = distribute_rewards(&chain, 1, &stakes, &RewardPolicy::default(), &recipients(3, 7), 0);
        assert_eq!(next.block_count, 6);
        assert_eq!(next.paid_total(), next.block_total);
    }

    #[test]
    fn zero_stake_carries_the_stake_pool() {
        let chain = day_chain(2);
        let none = StakeTable::default();
        let set = distribute_rewards(&chain, 0, &none, &RewardPolicy::default(), &recipients(2, 2), 0);
        assert!(set.carried_out > 0);
        assert_eq!(set.paid_total() + set.carried_out, set.block_total);
        let stakes = table(&[("A", 1)]);
        let later = distribute_rewards(&chain, 0, &stakes, &RewardPolicy::default(), &recipients(2, 2), set.carried_out);
        assert_eq!(later.paid_total(), later.block_total + set.carried_out);
    }

    proptest::proptest! {
        #[test]
        fn conservation_for_any_split(
            total in 0u64..10_000_000_000_000,
            m in 0u32..=100, s in 0u32..=100, o in 0u32..=100,
            sp in 0usize..12, fn_ in 0usize..40,
            stakes in proptest::collection::vec(0u64..1_000_000, 0..8),
        ) {
            let (m, s, o) = (m as f64 / 300.0, s as f64 / 300.0, o as f64 / 300.0);
            let policy = RewardPolicy { mint_fraction: m, superpeer_fraction: s, opcost_fraction: o, stake_fraction: 1.0 - m - s - o };
            let table = StakeTable::new(stakes.iter().enumerate().map(|(i, v)| (addr(&format!("s{i}")), *v)).collect());
            let r = recipients(sp, fn_);
            let mut payouts = BTreeMap::new();
            let (_, rest) = split_block_reward(total, &policy.shares(), r.default_mint.as_ref(), &r, &table, &mut payouts);
            let paid: u64 = payouts.values().sum();
            proptest::prop_assert_eq!(paid + rest, total);
        }
    }
}
