//! Super-peer overlay: fitness scoring, super-peer selection, joins,
//! bootstrap and seed services, connection caps and reconfiguration.

mod fitness;
mod topology;

pub use fitness::{score_fitness, FitnessMetrics, FitnessWeights, Normalization};
pub use topology::{
    bootstrap_peers, join_network, reconfigure, score_all, select_seed_agent, select_super_peers,
    ConnectionPlan, JoinOutcome, NodeId, OverlayConfig, OverlayError, Selection, Topology, TopologyViolation,
    SOLICIT_COUNT,
};

use std::collections::BTreeMap;

use rand::Rng;

/// Initial network formation: select the backbone from the fitness table,
/// then join every remaining node in ascending id order through a bootstrap
/// sample of already-connected nodes.
pub fn build_topology<R: Rng>(
    fitness: &BTreeMap<NodeId, FitnessMetrics>,
    weights: &FitnessWeights,
    cfg: &OverlayConfig,
    latency: &dyn Fn(NodeId, NodeId) -> u64,
    rng: &mut R,
) -> Result<(Topology, Option<String>), OverlayError> {
    let selection = select_super_peers(&score_all(fitness, weights), cfg.super_peer_count);
    let full: Vec<NodeId> = fitness
        .keys()
        .copied()
        .filter(|n| !selection.super_peers.contains(n))
        .collect();
    let mut topo = Topology::new(selection.super_peers.clone(), full.len(), cfg);
    let mut connected: Vec<NodeId> = selection.super_peers.iter().copied().collect();
    for n in full {
        let view = bootstrap_peers(&connected, SOLICIT_COUNT, rng)?;
        let plan = join_network(n, &view, &topo, &|sp| latency(n, sp))?.plan;
        topo.install(n, plan);
        connected.push(n);
    }
    Ok((topo, selection.warning))
}
