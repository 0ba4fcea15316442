//! Recovery planning for proven faults.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::overlay::{NodeId, Topology};

use super::AgentKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "kebab-case")]
pub enum FaultReport {
    /// The mint at `host` misbehaved at `height`; `committed` if the bad
    /// block made it into the chain.
    DefectiveMint { host: NodeId, height: u64, committed: bool },
    MintCrashed { host: NodeId },
    FaultySuperPeer { node: NodeId },
}

#[derive(Debug, Clone, Copy)]
pub struct SystemView<'a> {
    pub topology: &'a Topology,
    pub live: &'a BTreeSet<NodeId>,
    pub agent_hosts: &'a BTreeMap<AgentKind, NodeId>,
    /// Replacement candidates, best first.
    pub candidates: &'a [NodeId],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum RecoveryAction {
    RevertBlock { height: u64 },
    PromoteBackupMint { node: NodeId },
    DisableSuperPeer { node: NodeId },
    ReplaceSuperPeer { old: NodeId, new: NodeId },
    HandoffAgent { kind: AgentKind, to: NodeId },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub actions: Vec<RecoveryAction>,
}

impl RecoveryPlan {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn reverts(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, RecoveryAction::RevertBlock { .. }))
            .count()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecoveryError {
    #[error("no eligible super peer or candidate to take over from {0}")]
    NoBackupAvailable(NodeId),
}

/// Next live super peer after `host` around the ring.
fn backup_mint(view: &SystemView<'_>, host: NodeId, excluded: &BTreeSet<NodeId>) -> Option<NodeId> {
    let ring = view.topology.ring();
    let start = ring.iter().position(|&n| n == host).map_or(0, |i| i + 1);
    (0..ring.len())
        .map(|i| ring[(start + i) % ring.len()])
        .find(|n| *n != host && view.live.contains(n) && !excluded.contains(n))
}

/// Plans recovery for a batch of faults. Only the last committed block can
/// be rolled back, so a plan carries at most one revert.
pub fn recover(faults: &[FaultReport], view: &SystemView<'_>) -> Result<RecoveryPlan, RecoveryError> {
    let mut plan = RecoveryPlan::default();
    let faulty: BTreeSet<NodeId> = faults
        .iter()
        .map(|f| match f {
            FaultReport::FaultySuperPeer { node } => *node,
            FaultReport::DefectiveMint { host, .. } | FaultReport::MintCrashed { host } => *host,
        })
        .collect();
    if let Some(h) = faults
        .iter()
        .filter_map(|f| match f {
            FaultReport::DefectiveMint {
                height,
                committed: true,
                ..
            } => Some(*height),
            _ => None,
        })
        .max()
    {
        plan.actions.push(RecoveryAction::RevertBlock { height: h });
    }
    let mut promoted = false;
    for f in faults {
        if let FaultReport::DefectiveMint { host, .. } | FaultReport::MintCrashed { host } = f {
            if promoted {
                continue;
            }
            let node = backup_mint(view, *host, &faulty).ok_or(RecoveryError::NoBackupAvailable(*host))?;
            plan.actions.push(RecoveryAction::PromoteBackupMint { node });
            promoted = true;
        }
    }
    let mut used = BTreeSet::new();
    for f in faults {
        let FaultReport::FaultySuperPeer { node } = f else {
            continue;
        };
        if !view.topology.is_super_peer(*node) {
            continue;
        }
        let new = view
            .candidates
            .iter()
            .copied()
            .find(|c| {
                !view.topology.is_super_peer(*c) && view.live.contains(c) && !faulty.contains(c) && !used.contains(c)
            })
            .ok_or(RecoveryError::NoBackupAvailable(*node))?;
        used.insert(new);
        plan.actions.push(RecoveryAction::DisableSuperPeer { node: *node });
        plan.actions.push(RecoveryAction::ReplaceSuperPeer { old: *node, new });
        for (&kind, &host) in view.agent_hosts {
            if host == *node && !(kind == AgentKind::Mint && promoted) {
                plan.actions.push(RecoveryAction::HandoffAgent { kind, to: new });
            }
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{ConnectionPlan, OverlayConfig};

    fn topo() -> Topology {
        let sps: BTreeSet<NodeId> = (0..4).map(NodeId).collect();
        let cfg = OverlayConfig {
            super_peer_count: 4,
            max_connection_fraction: 1.0,
            ..OverlayConfig::default()
        };
        let mut t = Topology::new(sps, 4, &cfg);
        for i in 4..8 {
            let p = i % 4;
            t.install(
                NodeId(i),
                ConnectionPlan {
                    primary: NodeId(p),
                    backups: [NodeId((p + 1) % 4), NodeId((p + 2) % 4)],
                },
            );
        }
        t
    }

    #[test]
    fn no_faults_no_actions() {
        let t = topo();
        let live: BTreeSet<NodeId> = (0..8).map(NodeId).collect();
        let hosts = BTreeMap::new();
        let view = SystemView {
            topology: &t,
            live: &live,
            agent_hosts: &hosts,
            candidates: &[],
        };
        assert!(recover(&[], &view).unwrap().is_empty());
    }

    #[test]
    fn defective_mint_reverts_once_and_promotes_ring_successor() {
        let t = topo();
        let mut live: BTreeSet<NodeId> = (0..8).map(NodeId).collect();
        live.remove(&NodeId(2));
        let hosts = BTreeMap::new();
        let view = SystemView {
            topology: &t,
            live: &live,
            agent_hosts: &hosts,
            candidates: &[],
        };
        let plan = recover(
            &[
                FaultReport::DefectiveMint {
                    host: NodeId(1),
                    height: 7,
                    committed: true,
                },
                FaultReport::DefectiveMint {
                    host: NodeId(1),
                    height: 7,
                    committed: true,
                },
            ],
            &view,
        )
        .unwrap();
        assert_eq!(
            plan.actions,
            vec![
                RecoveryAction::RevertBlock { height: 7 },
                RecoveryAction::PromoteBackupMint { node: NodeId(3) },
            ]
        );
        assert_eq!(plan.reverts(), 1);
    }

    #[test]
    fn faulty_audit_host_is_replaced_and_agent_moves() {
        let t = topo();
        let live: BTreeSet<NodeId> = (0..8).map(NodeId).collect();
        let hosts: BTreeMap<AgentKind, NodeId> =
            [(AgentKind::AuditPrimary, NodeId(2)), (AgentKind::Mint, NodeId(0))].into();
        let view = SystemView {
            topology: &t,
            live: &live,
            agent_hosts: &hosts,
            candidates: &[NodeId(1), NodeId(6), NodeId(5)],
        };
        let plan = recover(&[FaultReport::FaultySuperPeer { node: NodeId(2) }], &view).unwrap();
        assert_eq!(
            plan.actions,
            vec![
                RecoveryAction::DisableSuperPeer { node: NodeId(2) },
                RecoveryAction::ReplaceSuperPeer {
                    old: NodeId(2),
                    new: NodeId(6)
                },
                RecoveryAction::HandoffAgent {
                    kind: AgentKind::AuditPrimary,
                    to: NodeId(6)
                },
            ]
        );
    }

    #[test]
    fn exhausted_candidates_fail() {
        let t = topo();
        let live: BTreeSet<NodeId> = [NodeId(0)].into();
        let hosts = BTreeMap::new();
        let view = SystemView {
            topology: &t,
            live: &live,
            agent_hosts: &hosts,
            candidates: &[],
        };
        assert_eq!(
            recover(&[FaultReport::MintCrashed { host: NodeId(0) }], &view),
            Err(RecoveryError::NoBackupAvailable(NodeId(0)))
        );
    }
}
