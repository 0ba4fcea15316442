//! Scenario files: one strict JSON document per run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agents::RewardPolicy;
use crate::crypto::Scheme;
use crate::ledger::{block_subsidy, MintPolicy};
use crate::overlay::OverlayConfig;

use super::fault::{FaultMode, FaultSpec, FaultTarget};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub base_ms: u64,
    /// Jitter is uniform in `0..=jitter_max_ms`.
    pub jitter_max_ms: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            base_ms: 50,
            jitter_max_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlaySettings {
    pub max_connection_fraction: f64,
    pub reconfigure_period_ms: i64,
    pub outer_rings: u32,
    pub firewall_whitelist: bool,
}

impl Default for OverlaySettings {
    fn default() -> Self {
        let d = OverlayConfig::default();
        OverlaySettings {
            max_connection_fraction: 0.4,
            reconfigure_period_ms: d.reconfigure_period_ms,
            outer_rings: d.outer_rings,
            firewall_whitelist: d.firewall_whitelist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub tx_per_node_per_hour: f64,
    pub zero_fee_fraction: f64,
    pub fee: u64,
    pub amount_min: u64,
    pub amount_max: u64,
    pub utxos_per_node: usize,
    /// No new transactions after this time; defaults to the run duration.
    pub issue_until_ms: Option<i64>,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            tx_per_node_per_hour: 1.0,
            zero_fee_fraction: 0.1,
            fee: 1_000,
            amount_min: 1_000,
            amount_max: 100_000,
            utxos_per_node: 4,
            issue_until_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSettings {
    /// Committed blocks between mint migrations; 0 disables rotation.
    pub mint_rotation_blocks: u64,
    pub netops_period_ms: i64,
    pub provisioning_period_ms: i64,
    pub audit_period_ms: i64,
    pub audit_probe_bytes: usize,
    pub audit_enabled: bool,
    /// Silence after a seal boundary before nodes report a stall.
    pub mint_timeout_ms: i64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            mint_rotation_blocks: 6,
            netops_period_ms: 3 * 3_600_000,
            provisioning_period_ms: 24 * 3_600_000,
            audit_period_ms: 24 * 3_600_000,
            audit_probe_bytes: 32,
            audit_enabled: true,
            mint_timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration_ms: i64,
    /// Virtual time after `duration_ms` during which in-flight work settles.
    #[serde(default = "default_drain")]
    pub drain_ms: i64,
    /// All nodes, super peers included.
    pub node_count: usize,
    pub super_peer_count: usize,
    #[serde(default)]
    pub crypto: Scheme,
    /// Per-node stake in satoshis, indexed by node id. Defaults to an equal
    /// split of the genesis subsidy.
    #[serde(default)]
    pub stakes: Option<Vec<u64>>,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub clock_skews_ms: BTreeMap<u32, i64>,
    #[serde(default)]
    pub mint_policy: MintPolicy,
    #[serde(default)]
    pub reward_policy: RewardPolicy,
    #[serde(default)]
    pub overlay: OverlaySettings,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub agents: AgentSettings,
    /// Nodes that confirm any block the mint proposes.
    #[serde(default)]
    pub byzantine_nodes: Vec<u32>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

fn default_drain() -> i64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ScenarioError {
    pub errors: Vec<FieldError>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario")?;
        for e in &self.errors {
            write!(f, "; {}: {}", e.field, e.message)?;
        }
        Ok(())
    }
}

impl ScenarioError {
    fn single(field: &str, message: impl Into<String>) -> Self {
        ScenarioError {
            errors: vec![FieldError {
                field: field.into(),
                message: message.into(),
            }],
        }
    }
}

fn frac_ok(x: f64) -> bool {
    x.is_finite() && (0.0..=1.0).contains(&x)
}

impl Scenario {
    /// A fault-free scenario with defaults everywhere else.
    pub fn basic(seed: u64, node_count: usize, super_peer_count: usize, duration_ms: i64) -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: String::new(),
            seed,
            duration_ms,
            drain_ms: default_drain(),
            node_count,
            super_peer_count,
            crypto: Scheme::default(),
            stakes: None,
            latency: LatencyConfig::default(),
            clock_skews_ms: BTreeMap::new(),
            mint_policy: MintPolicy::default(),
            reward_policy: RewardPolicy::default(),
            overlay: OverlaySettings::default(),
            workload: Workload::default(),
            agents: AgentSettings::default(),
            byzantine_nodes: Vec::new(),
            faults: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "document".into());
            ScenarioError::single(&field, msg)
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn overlay_config(&self) -> OverlayConfig {
        OverlayConfig {
            super_peer_count: self.super_peer_count,
            max_connection_fraction: self.overlay.max_connection_fraction,
            reconfigure_period_ms: self.overlay.reconfigure_period_ms,
            outer_rings: self.overlay.outer_rings,
            firewall_whitelist: self.overlay.firewall_whitelist,
        }
    }

    pub fn full_node_count(&self) -> usize {
        self.node_count.saturating_sub(self.super_peer_count)
    }

    /// Stake per node id.
    pub fn stake_vector(&self) -> Vec<u64> {
        match &self.stakes {
            Some(v) => v.clone(),
            None => vec![block_subsidy(0) / self.node_count.max(1) as u64; self.node_count],
        }
    }

    pub fn issue_until(&self) -> i64 {
        self.workload.issue_until_ms.unwrap_or(self.duration_ms)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.into(),
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            bad("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if self.duration_ms <= 0 {
            bad("duration_ms", "must be positive".into());
        }
        if self.drain_ms < 0 {
            bad("drain_ms", "must not be negative".into());
        }
        if self.super_peer_count < 3 {
            bad("super_peer_count", "at least 3 super peers are needed for one primary and two backups".into());
        }
        if self.node_count <= self.super_peer_count {
            bad("node_count", "must exceed super_peer_count".into());
        }
        if self.node_count > 100_000 {
            bad("node_count", "too large".into());
        }
        let frac = self.overlay.max_connection_fraction;
        if !frac_ok(frac) {
            bad("overlay.max_connection_fraction", format!("{frac} is outside [0, 1]"));
        } else if self.super_peer_count >= 3 && self.node_count > self.super_peer_count {
            let f = self.full_node_count();
            let cap = (frac * f as f64 + 1e-9).floor() as usize;
            if (self.super_peer_count - 2) * cap < 3 * f {
                bad(
                    "overlay.max_connection_fraction",
                    format!(
                        "{} super peers with a cap of {cap} links cannot host three links for each of {f} full nodes",
                        self.super_peer_count
                    ),
                );
            }
        }
        if self.overlay.reconfigure_period_ms <= 0 {
            bad("overlay.reconfigure_period_ms", "must be positive".into());
        }
        let mp = &self.mint_policy;
        if mp.block_interval_ms <= 0 {
            bad("mint_policy.block_interval_ms", "must be positive".into());
        }
        if mp.max_block_txs == 0 {
            bad("mint_policy.max_block_txs", "must be positive".into());
        }
        if !frac_ok(mp.free_tx_fraction) {
            bad("mint_policy.free_tx_fraction", format!("{} is outside [0, 1]", mp.free_tx_fraction));
        }
        let rp = &self.reward_policy;
        for (name, v) in [
            ("reward_policy.mint_fraction", rp.mint_fraction),
            ("reward_policy.superpeer_fraction", rp.superpeer_fraction),
            ("reward_policy.opcost_fraction", rp.opcost_fraction),
            ("reward_policy.stake_fraction", rp.stake_fraction),
        ] {
            if !frac_ok(v) {
                bad(name, format!("{v} is outside [0, 1]"));
            }
        }
        if !rp.is_valid() {
            bad("reward_policy", "fractions must sum to 1".into());
        }
        let w = &self.workload;
        if !(w.tx_per_node_per_hour.is_finite() && w.tx_per_node_per_hour >= 0.0) {
            bad("workload.tx_per_node_per_hour", "must be a non-negative number".into());
        }
        if !frac_ok(w.zero_fee_fraction) {
            bad("workload.zero_fee_fraction", format!("{} is outside [0, 1]", w.zero_fee_fraction));
        }
        if w.amount_min == 0 || w.amount_min > w.amount_max {
            bad("workload.amount_min", "need 0 < amount_min <= amount_max".into());
        }
        if w.utxos_per_node == 0 {
            bad("workload.utxos_per_node", "must be positive".into());
        }
        let a = &self.agents;
        for (name, v) in [
            ("agents.netops_period_ms", a.netops_period_ms),
            ("agents.provisioning_period_ms", a.provisioning_period_ms),
            ("agents.audit_period_ms", a.audit_period_ms),
            ("agents.mint_timeout_ms", a.mint_timeout_ms),
        ] {
            if v <= 0 {
                bad(name, "must be positive".into());
            }
        }
        if a.mint_timeout_ms * 3 >= mp.block_interval_ms.max(1) {
            bad("agents.mint_timeout_ms", "must be well below a third of the block interval".into());
        }
        if let Some(stakes) = &self.stakes {
            if stakes.len() != self.node_count {
                bad("stakes", format!("expected {} entries, got {}", self.node_count, stakes.len()));
            }
            let total: u128 = stakes.iter().map(|&s| s as u128).sum();
            if total > block_subsidy(0) as u128 {
                bad("stakes", format!("total {total} exceeds the genesis subsidy {}", block_subsidy(0)));
            }
            if total == 0 {
                bad("stakes", "some stake must be offered".into());
            }
        }
        let ids = 0..self.node_count as u32;
        for id in self.clock_skews_ms.keys() {
            if !ids.contains(id) {
                bad("clock_skews_ms", format!("node {id} does not exist"));
            }
        }
        let mut seen = BTreeSet::new();
        for id in &self.byzantine_nodes {
            if !ids.contains(id) {
                bad("byzantine_nodes", format!("node {id} does not exist"));
            }
            if !seen.insert(id) {
                bad("byzantine_nodes", format!("node {id} listed twice"));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            let field = format!("faults[{i}]");
            if f.at_ms < 0 {
                bad(&field, "at_ms must not be negative".into());
            }
            match (&f.mode, f.target) {
                (FaultMode::Partition { nodes, duration_ms }, _) => {
                    if *duration_ms <= 0 {
                        bad(&field, "partition duration must be positive".into());
                    }
                    if nodes.is_empty() {
                        bad(&field, "partition needs at least one node".into());
                    }
                    for n in nodes {
                        if !ids.contains(n) {
                            bad(&field, format!("node {n} does not exist"));
                        }
                    }
                }
                (_, None) => bad(&field, "target is required".into()),
                (m, Some(FaultTarget::Node(n))) => {
                    if !ids.contains(&n) {
                        bad(&field, format!("node {n} does not exist"));
                    }
                    let _ = m;
                }
                (m, Some(FaultTarget::Agent(_))) if !m.is_mint_fault() && !matches!(m, FaultMode::Crash) => {
                    bad(&field, "only crash and mint faults may target an agent".into());
                }
                _ => {}
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError { errors: errs })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_scenario_validates_and_round_trips() {
        let sc = Scenario::basic(7, 60, 10, 3_600_000);
        sc.validate().unwrap();
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
        assert_eq!(sc.stake_vector().len(), 60);
    }

    #[test]
    fn out_of_range_fraction_names_the_field() {
        let mut sc = Scenario::basic(7, 60, 10, 3_600_000);
        sc.mint_policy.free_tx_fraction = 1.5;
        let e = sc.validate().unwrap_err();
        assert!(e.errors.iter().any(|f| f.field == "mint_policy.free_tx_fraction"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let sc = Scenario::basic(7, 60, 10, 3_600_000);
        let mut v: serde_json::Value = serde_json::from_str(&sc.to_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        let e = Scenario::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.errors[0].field, "surprise");
    }

    #[test]
    fn infeasible_overlay_is_rejected() {
        let mut sc = Scenario::basic(7, 60, 10, 3_600_000);
        sc.overlay.max_connection_fraction = 0.1;
        let e = sc.validate().unwrap_err();
        assert!(e.errors.iter().any(|f| f.field == "overlay.max_connection_fraction"));
    }

    #[test]
    fn stakes_must_cover_every_node_within_subsidy() {
        let mut sc = Scenario::basic(7, 12, 5, 3_600_000);
        sc.overlay.max_connection_fraction = 1.0;
        sc.stakes = Some(vec![1; 11]);
        assert!(sc.validate().is_err());
        sc.stakes = Some(vec![block_subsidy(0); 12]);
        assert!(sc.validate().is_err());
        sc.stakes = Some(vec![1_000_000; 12]);
        sc.validate().unwrap();
    }
}
