use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fitness::{score_fitness, FitnessMetrics, FitnessWeights, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of nodes asked for the super-peer list during a join.
pub const SOLICIT_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayConfig {
    pub super_peer_count: usize,
    pub max_connection_fraction: f64,
    pub reconfigure_period_ms: i64,
    /// Extra aggregation rings between full nodes and the backbone.
    pub outer_rings: u32,
    /// Reject traffic from peers that are not enrolled in the topology.
    pub firewall_whitelist: bool,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            super_peer_count: 100,
            max_connection_fraction: 0.10,
            reconfigure_period_ms: 7 * 24 * 3_600_000,
            outer_rings: 0,
            firewall_whitelist: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub super_peers: BTreeSet<NodeId>,
    pub warning: Option<String>,
}

/// Top `n` by score, ties to the lower id.
pub fn select_super_peers(candidates: &[(NodeId, f64)], n: usize) -> Selection {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let warning = (candidates.len() < n).then(|| {
        format!(
            "only {} candidates for {} super-peer slots; all selected",
            candidates.len(),
            n
        )
    });
    Selection {
        super_peers: ranked.into_iter().take(n).map(|(id, _)| id).collect(),
        warning,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionPlan {
    pub primary: NodeId,
    pub backups: [NodeId; 2],
}

impl ConnectionPlan {
    pub fn all(&self) -> [NodeId; 3] {
        [self.primary, self.backups[0], self.backups[1]]
    }

    pub fn contains(&self, sp: NodeId) -> bool {
        self.all().contains(&sp)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OverlayError {
    #[error("no three super peers with spare capacity")]
    NoCapacity,
    #[error("bootstrap registry is empty")]
    EmptyRegistry,
    #[error("node {0} is unknown to the topology")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyViolation {
    WrongConnectionCount(NodeId),
    ConnectionToNonSuperPeer(NodeId, NodeId),
    OverCapacity { super_peer: NodeId, load: usize, cap: usize },
    BrokenRing,
}

impl std::fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopologyViolation::WrongConnectionCount(n) => write!(f, "node {n} lacks three distinct super-peer links"),
            TopologyViolation::ConnectionToNonSuperPeer(n, s) => write!(f, "node {n} links to non-super-peer {s}"),
            TopologyViolation::OverCapacity { super_peer, load, cap } => {
                write!(f, "super peer {super_peer} carries {load} links over cap {cap}")
            }
            TopologyViolation::BrokenRing => write!(f, "super-peer ring does not cover the super-peer set"),
        }
    }
}

/// Super-peer backbone plus each full node's primary and backup links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    super_peers: BTreeSet<NodeId>,
    ring: Vec<NodeId>,
    connections: BTreeMap<NodeId, ConnectionPlan>,
    /// Full-node count the per-super-peer cap was computed from at the last
    /// (re)configuration.
    cap_basis: usize,
    max_connection_fraction: f64,
    outer_rings: u32,
}

impl Topology {
    pub fn new(super_peers: BTreeSet<NodeId>, full_node_count: usize, cfg: &OverlayConfig) -> Self {
        let ring = super_peers.iter().copied().collect();
        Topology {
            super_peers,
            ring,
            connections: BTreeMap::new(),
            cap_basis: full_node_count,
            max_connection_fraction: cfg.max_connection_fraction,
            outer_rings: cfg.outer_rings,
        }
    }

    pub fn super_peers(&self) -> &BTreeSet<NodeId> {
        &self.super_peers
    }

    pub fn is_super_peer(&self, n: NodeId) -> bool {
        self.super_peers.contains(&n)
    }

    pub fn ring(&self) -> &[NodeId] {
        &self.ring
    }

    pub fn ring_edges(&self) -> Vec<(NodeId, NodeId)> {
        let n = self.ring.len();
        match n {
            0 | 1 => Vec::new(),
            2 => vec![(self.ring[0], self.ring[1])],
            _ => (0..n).map(|i| (self.ring[i], self.ring[(i + 1) % n])).collect(),
        }
    }

    /// Next super peer after `sp` on the ring.
    pub fn ring_successor(&self, sp: NodeId) -> Option<NodeId> {
        let i = self.ring.iter().position(|&x| x == sp)?;
        Some(self.ring[(i + 1) % self.ring.len()])
    }

    pub fn connections(&self) -> &BTreeMap<NodeId, ConnectionPlan> {
        &self.connections
    }

    pub fn plan_of(&self, n: NodeId) -> Option<&ConnectionPlan> {
        self.connections.get(&n)
    }

    pub fn full_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.connections.keys().copied()
    }

    pub fn outer_rings(&self) -> u32 {
        self.outer_rings
    }

    pub fn cap(&self) -> usize {
        (self.max_connection_fraction * self.cap_basis as f64 + 1e-9).floor() as usize
    }

    pub fn load(&self, sp: NodeId) -> usize {
        self.connections.values().filter(|p| p.contains(sp)).count()
    }

    pub fn loads(&self) -> BTreeMap<NodeId, usize> {
        let mut out: BTreeMap<NodeId, usize> = self.super_peers.iter().map(|&s| (s, 0)).collect();
        for p in self.connections.values() {
            for s in p.all() {
                *out.entry(s).or_insert(0) += 1;
            }
        }
        out
    }

    /// Full nodes whose primary is `sp`.
    pub fn primaries_of(&self, sp: NodeId) -> Vec<NodeId> {
        self.connections
            .iter()
            .filter(|(_, p)| p.primary == sp)
            .map(|(&n, _)| n)
            .collect()
    }

    /// Full nodes linked to `sp` in any role.
    pub fn attached_to(&self, sp: NodeId) -> Vec<NodeId> {
        self.connections
            .iter()
            .filter(|(_, p)| p.contains(sp))
            .map(|(&n, _)| n)
            .collect()
    }

    /// Hops from `node` to the super peer `host` on the backbone.
    pub fn hops_to(&self, node: NodeId, host: NodeId) -> u32 {
        if node == host {
            return 0;
        }
        if self.is_super_peer(node) {
            return 1;
        }
        let access = 1 + self.outer_rings;
        match self.connections.get(&node) {
            Some(p) if p.primary == host => access,
            _ => access + 1,
        }
    }

    pub fn install(&mut self, node: NodeId, plan: ConnectionPlan) {
        self.connections.insert(node, plan);
    }

    /// Removes a full node and its links.
    pub fn remove_full_node(&mut self, node: NodeId) -> Option<ConnectionPlan> {
        self.connections.remove(&node)
    }

    pub fn check_invariants(&self) -> Result<(), TopologyViolation> {
        let cap = self.cap();
        for (&n, p) in &self.connections {
            let set: BTreeSet<NodeId> = p.all().into_iter().collect();
            if set.len() != 3 {
                return Err(TopologyViolation::WrongConnectionCount(n));
            }
            if let Some(&bad) = set.iter().find(|s| !self.super_peers.contains(s)) {
                return Err(TopologyViolation::ConnectionToNonSuperPeer(n, bad));
            }
        }
        for (sp, load) in self.loads() {
            if load > cap {
                return Err(TopologyViolation::OverCapacity {
                    super_peer: sp,
                    load,
                    cap,
                });
            }
        }
        let ring: BTreeSet<NodeId> = self.ring.iter().copied().collect();
        if ring != self.super_peers || ring.len() != self.ring.len() {
            return Err(TopologyViolation::BrokenRing);
        }
        Ok(())
    }

    fn rebuild_ring(&mut self) {
        self.ring = self.super_peers.iter().copied().collect();
    }

    /// Swaps `old` out of the backbone for `new`. Full nodes that lose a link
    /// rejoin in ascending id order.
    pub fn replace_super_peer<R: Rng>(
        &mut self,
        old: NodeId,
        new: NodeId,
        latency: &dyn Fn(NodeId, NodeId) -> u64,
        rng: &mut R,
    ) -> Result<Vec<NodeId>, OverlayError> {
        self.connections.remove(&new);
        self.super_peers.remove(&old);
        self.super_peers.insert(new);
        self.rebuild_ring();
        let orphans = self.attached_to(old);
        for &n in &orphans {
            self.connections.remove(&n);
        }
        for &n in &orphans {
            self.rejoin(n, latency, rng)?;
        }
        Ok(orphans)
    }

    /// Drops a super peer without replacement; its full nodes rejoin.
    pub fn remove_super_peer<R: Rng>(
        &mut self,
        old: NodeId,
        latency: &dyn Fn(NodeId, NodeId) -> u64,
        rng: &mut R,
    ) -> Result<Vec<NodeId>, OverlayError> {
        self.super_peers.remove(&old);
        self.rebuild_ring();
        let orphans = self.attached_to(old);
        for &n in &orphans {
            self.connections.remove(&n);
        }
        for &n in &orphans {
            self.rejoin(n, latency, rng)?;
        }
        Ok(orphans)
    }

    fn rejoin<R: Rng>(
        &mut self,
        node: NodeId,
        latency: &dyn Fn(NodeId, NodeId) -> u64,
        rng: &mut R,
    ) -> Result<ConnectionPlan, OverlayError> {
        let registry: Vec<NodeId> = self
            .super_peers
            .iter()
            .copied()
            .chain(self.connections.keys().copied())
            .filter(|&n| n != node)
            .collect();
        let view = bootstrap_peers(&registry, SOLICIT_COUNT, rng)?;
        let plan = join_network(node, &view, self, &|sp| latency(node, sp))?.plan;
        self.install(node, plan);
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinOutcome {
    pub plan: ConnectionPlan,
    pub solicited: Vec<NodeId>,
}

/// Plans a join: asks up to ten nodes from the bootstrap view for the
/// super-peer list, then picks the three lowest-latency super peers with
/// spare capacity (ties to the lower id). Does not mutate the topology.
pub fn join_network(
    new_node: NodeId,
    bootstrap_view: &[NodeId],
    topology: &Topology,
    latency_to: &dyn Fn(NodeId) -> u64,
) -> Result<JoinOutcome, OverlayError> {
    if bootstrap_view.is_empty() {
        return Err(OverlayError::EmptyRegistry);
    }
    let solicited: Vec<NodeId> = bootstrap_view.iter().copied().take(SOLICIT_COUNT).collect();
    // Every connected node holds the same super-peer list (shared knowledge).
    let cap = topology.cap();
    let loads = topology.loads();
    let mut eligible: Vec<(u64, NodeId)> = topology
        .super_peers()
        .iter()
        .filter(|&&sp| sp != new_node && loads.get(&sp).copied().unwrap_or(0) < cap)
        .map(|&sp| (latency_to(sp), sp))
        .collect();
    eligible.sort();
    if eligible.len() < 3 {
        return Err(OverlayError::NoCapacity);
    }
    Ok(JoinOutcome {
        plan: ConnectionPlan {
            primary: eligible[0].1,
            backups: [eligible[1].1, eligible[2].1],
        },
        solicited,
    })
}

/// Uniform sample without replacement, clamped to the registry size.
pub fn bootstrap_peers<R: Rng>(registry: &[NodeId], count: usize, rng: &mut R) -> Result<Vec<NodeId>, OverlayError> {
    if registry.is_empty() {
        return Err(OverlayError::EmptyRegistry);
    }
    Ok(registry.choose_multiple(rng, count).copied().collect())
}

/// Minimizes `latency * (1 + load)`, ties to the lower id.
pub fn select_seed_agent(seed_agents: &[(NodeId, u64, u64)]) -> Option<NodeId> {
    seed_agents
        .iter()
        .min_by_key(|(id, lat, load)| (lat.saturating_mul(load.saturating_add(1)), *id))
        .map(|(id, _, _)| *id)
}

/// Scores every node from the fitness table.
pub fn score_all(fitness: &BTreeMap<NodeId, FitnessMetrics>, weights: &FitnessWeights) -> Vec<(NodeId, f64)> {
    let norm = Normalization::from_population(fitness.values());
    fitness
        .iter()
        .map(|(&id, m)| (id, score_fitness(m, weights, &norm)))
        .collect()
}

/// Recomputes the super-peer set. Unchanged selection returns the topology
/// as is; otherwise demoted super peers and full nodes that lost a link
/// rejoin in ascending id order and the ring is rebuilt.
pub fn reconfigure<R: Rng>(
    topology: &Topology,
    fitness: &BTreeMap<NodeId, FitnessMetrics>,
    weights: &FitnessWeights,
    cfg: &OverlayConfig,
    latency: &dyn Fn(NodeId, NodeId) -> u64,
    rng: &mut R,
) -> Result<Topology, OverlayError> {
    let selection = select_super_peers(&score_all(fitness, weights), cfg.super_peer_count);
    if &selection.super_peers == topology.super_peers() {
        return Ok(topology.clone());
    }
    let mut next = topology.clone();
    let demoted: Vec<NodeId> = topology.super_peers().difference(&selection.super_peers).copied().collect();
    let promoted: Vec<NodeId> = selection.super_peers.difference(topology.super_peers()).copied().collect();
    for p in &promoted {
        next.connections.remove(p);
    }
    next.super_peers = selection.super_peers;
    next.rebuild_ring();
    let mut rejoin: BTreeSet<NodeId> = demoted.iter().copied().collect();
    for (&n, plan) in &topology.connections {
        if plan.all().iter().any(|s| demoted.contains(s)) && !promoted.contains(&n) {
            rejoin.insert(n);
        }
    }
    for n in &rejoin {
        next.connections.remove(n);
    }
    next.cap_basis = next.connections.len() + rejoin.len();
    for n in rejoin {
        next.rejoin(n, latency, rng)?;
    }
    Ok(next)
}
