//! Fault injection, audit polls, dividends, metrics, agent placement and
//! the end-of-run summary.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::agents::{
    check_response, distribute_rewards, netops_report, probe_offsets, secondary_sample, AgentKind, AuditFinding,
    ChainImage, FindingKind, NetopsInput, ProbeResponse, RewardRecipients, BLOCKS_PER_DAY,
};
use crate::consensus::{Evidence, EvidenceKind};
use crate::crypto::{Address, Digest};
use crate::journal::Activity;
use crate::overlay::{reconfigure, FitnessWeights, NodeId};

use super::engine::{Ev, Sim, REPLY_TIMEOUT_MS};
use super::fault::{FaultMode, FaultStatus, FaultTarget};
use super::message::Msg;
use super::record::*;

/// An audit probe awaiting its answer.
pub(crate) struct Poll {
    kind: AgentKind,
    auditor: u32,
    target: u32,
    started_ms: i64,
    reference: ChainImage,
    offsets: Vec<u64>,
}

/// Assumed per-entry size of a stored log entry, for storage metrics.
const LOG_ENTRY_BYTES: u64 = 160;

impl Sim {
    // ---- faults ----

    pub(crate) fn on_fault(&mut self, index: usize) {
        let spec = self.sc.faults[index].clone();
        let target = match spec.target {
            Some(FaultTarget::Node(n)) => Some(n),
            Some(FaultTarget::Agent(k)) => self.registry.get(&k).copied(),
            None => None,
        };
        let rec = &mut self.faults[index];
        rec.node = target;
        let live = target.is_some_and(|t| (t as usize) < self.nodes.len() && self.nodes[t as usize].active());
        let status = match (&spec.mode, target) {
            (FaultMode::Partition { nodes, duration_ms }, _) => {
                let side: BTreeSet<u32> = nodes.iter().copied().collect();
                self.partitions.push((index, side));
                self.partition_windows.push((self.now, self.now + duration_ms));
                self.at(self.now + duration_ms, Ev::PartitionEnd { index });
                FaultStatus::Applied
            }
            (_, Some(t)) if live => self.apply_fault(index, t, &spec.mode),
            _ => FaultStatus::TargetMissing,
        };
        self.faults[index].status = status;
        let label = spec.mode.label();
        self.note(target.unwrap_or(0), "fault", |r| {
            r.detail = Some(format!("{label} {status:?}"));
        });
    }

    fn apply_fault(&mut self, index: usize, t: u32, mode: &FaultMode) -> FaultStatus {
        let node = &mut self.nodes[t as usize];
        match mode {
            FaultMode::Crash => {
                node.alive = false;
                self.departures += 1;
                FaultStatus::Applied
            }
            m if m.is_mint_fault() => {
                node.armed.push((index, m.clone()));
                self.checker.mark_faulty(t);
                FaultStatus::Armed
            }
            FaultMode::TamperLogEntry { index: i } => {
                let entries = node.log.entries_mut_for_fault_injection();
                let Some(e) = entries.get_mut(*i as usize) else {
                    return FaultStatus::TargetMissing;
                };
                let mut flipped = *e.payload_digest.as_bytes();
                flipped[0] ^= 0xff;
                e.payload_digest = Digest::from_bytes(flipped);
                self.tampered.insert(t);
                self.checker.mark_faulty(t);
                FaultStatus::Applied
            }
            FaultMode::CorruptReplicaByte { offset } => {
                let len = ChainImage::of(&node.chain, node.chain.height()).map_or(0, |i| i.len());
                if *offset >= len {
                    return FaultStatus::TargetMissing;
                }
                node.corrupt.insert(*offset);
                self.corrupted.insert(t);
                self.checker.mark_faulty(t);
                FaultStatus::Applied
            }
            _ => FaultStatus::TargetMissing,
        }
    }

    pub(crate) fn on_partition_end(&mut self, index: usize) {
        self.partitions.retain(|(i, _)| *i != index);
        self.note(0, "partition-end", |r| r.detail = Some(format!("fault {index}")));
    }

    // ---- audit ----

    pub(crate) fn on_audit_day(&mut self) {
        self.audit_day += 1;
        let period = self.sc.agents.audit_period_ms;
        let targets: Vec<u32> = (0..self.nodes.len() as u32).filter(|&n| !self.nodes[n as usize].banned).collect();
        for &t in &targets {
            let at = self.now + self.audit_rng.gen_range(0..period.max(1));
            self.at(
                at,
                Ev::AuditPoll {
                    kind: AgentKind::AuditPrimary,
                    target: t,
                },
            );
        }
        for t in secondary_sample(&targets, &mut self.audit_rng) {
            let at = self.now + self.audit_rng.gen_range(0..period.max(1));
            self.at(
                at,
                Ev::AuditPoll {
                    kind: AgentKind::AuditSecondary,
                    target: t,
                },
            );
        }
    }

    pub(crate) fn on_audit_poll(&mut self, kind: AgentKind, target: u32) {
        let auditor = self.registry[&kind];
        if !self.active(auditor) || target == auditor || self.nodes[target as usize].banned {
            return;
        }
        let h = self.nodes[auditor as usize].chain.height();
        if h == 0 {
            return;
        }
        let at = h - 1;
        let reference = ChainImage::of(&self.nodes[auditor as usize].chain, at).expect("height checked");
        let offsets = probe_offsets(&mut self.audit_rng, reference.len(), self.sc.agents.audit_probe_bytes);
        let taddr = self.addr(target);
        self.nodes[auditor as usize].record(
            self.now,
            &taddr,
            Activity::AuditProbe {
                target: taddr.clone(),
                at_height: at,
                offsets: offsets.clone(),
            },
        );
        let id = self.next_poll;
        self.next_poll += 1;
        self.polls.insert(
            id,
            Poll {
                kind,
                auditor,
                target,
                started_ms: self.now,
                reference,
                offsets: offsets.clone(),
            },
        );
        self.send(
            auditor,
            target,
            Msg::Probe {
                poll: id,
                at_height: at,
                offsets,
            },
        );
        self.at(self.now + REPLY_TIMEOUT_MS, Ev::ProbeTimeout { poll: id });
    }

    pub(crate) fn on_probe(&mut self, n: u32, src: u32, poll: u64, at: u64, offsets: &[u64]) {
        let node = &self.nodes[n as usize];
        let image = ChainImage::of(&node.chain, at);
        let bytes = offsets
            .iter()
            .map(|o| {
                let b = image.as_ref()?.byte(*o)?;
                Some(if node.corrupt.contains(o) { b ^ 0xff } else { b })
            })
            .collect();
        let response = ProbeResponse {
            tip_height: node.chain.height(),
            head_hash: image.as_ref().map(|i| i.head()),
            bytes,
            log: Some(node.log.export(node.log.authenticator(&node.key))),
        };
        self.send(
            n,
            src,
            Msg::ProbeReply {
                poll,
                response: Box::new(response),
            },
        );
    }

    pub(crate) fn on_probe_reply(&mut self, n: u32, src: u32, poll: u64, response: &ProbeResponse) {
        let matches = self.polls.get(&poll).is_some_and(|p| p.auditor == n && p.target == src);
        if !matches {
            return;
        }
        let p = self.polls.remove(&poll).expect("checked");
        let findings = check_response(&self.addr(p.target), &p.reference, &p.offsets, Some(response));
        self.handle_findings(&p, findings);
    }

    pub(crate) fn on_probe_timeout(&mut self, poll: u64) {
        let Some(p) = self.polls.remove(&poll) else {
            return;
        };
        let findings = check_response(&self.addr(p.target), &p.reference, &p.offsets, None);
        self.handle_findings(&p, findings);
    }

    /// Re-checks a finding against ground truth.
    fn finding_sound(&self, p: &Poll, f: &AuditFinding) -> bool {
        let t = p.target;
        let node = &self.nodes[t as usize];
        match f.kind {
            FindingKind::LogTamper => self.tampered.contains(&t),
            FindingKind::MissingBytes => self.corrupted.contains(&t) && f.detail.iter().all(|o| node.corrupt.contains(o)),
            FindingKind::HeadHashMismatch => {
                node.chain.block_at(f.at_height).map(|b| b.block_hash) != Some(p.reference.head())
            }
            FindingKind::Unresponsive => {
                !node.active()
                    || !self.active(p.auditor)
                    || self.partition_windows.iter().any(|&(a, b)| a <= self.now && b >= p.started_ms)
            }
        }
    }

    fn handle_findings(&mut self, p: &Poll, findings: Vec<AuditFinding>) {
        for f in findings {
            if !self.finding_sound(p, &f) {
                self.checker.violation(
                    self.now,
                    "audit-soundness",
                    format!("{:?} against untouched node {}", f.kind, p.target),
                );
            }
            self.findings.push(FindingRecord {
                at_ms: self.now,
                auditor: p.kind,
                target: p.target,
                finding: f.clone(),
            });
            let kind = f.kind;
            self.note(p.auditor, "finding", |r| {
                r.peer = Some(p.target);
                r.detail = Some(format!("{kind:?}"));
            });
            match kind {
                FindingKind::LogTamper => {
                    let ev = Evidence {
                        log: f.node.clone(),
                        entry_index: f.detail.first().copied().unwrap_or(0),
                        kind: EvidenceKind::LogTamper,
                    };
                    let was_mint = self.mint_host() == p.target;
                    self.ban(p.target, ev, "log-tamper");
                    self.detected_attacks += 1;
                    if was_mint {
                        if let Some(next) = self.mint_successor(p.target) {
                            self.new_epoch(next, None);
                        }
                    }
                }
                FindingKind::MissingBytes => {
                    self.nodes[p.target as usize].corrupt.clear();
                    self.corrupted.remove(&p.target);
                    self.note(p.target, "repair", |r| r.detail = Some("replica bytes".into()));
                }
                FindingKind::HeadHashMismatch => {
                    let from = p.reference.height().saturating_sub(1);
                    self.send(p.auditor, p.target, Msg::SyncRequest { from_height: from });
                }
                FindingKind::Unresponsive => {}
            }
        }
    }

    // ---- agents ----

    /// Next active super peer after `n` around the ring (or the first one).
    fn next_sp(&self, n: u32) -> Option<u32> {
        let ring: Vec<u32> = self.topology.ring().iter().map(|x| x.0).collect();
        let start = ring.iter().position(|&x| x == n).map_or(0, |i| i + 1);
        (0..ring.len())
            .map(|i| ring[(start + i) % ring.len()])
            .find(|&x| self.active(x))
    }

    /// Restarts non-mint singletons whose host is gone or demoted.
    pub fn sweep_agents(&mut self) {
        for kind in AgentKind::SINGLETONS {
            if kind == AgentKind::Mint {
                continue;
            }
            let host = self.registry[&kind];
            if self.active(host) && self.is_sp(host) {
                continue;
            }
            if let Some(next) = self.next_sp(host) {
                self.migrate_agent(kind, next);
            }
        }
    }

    /// Seal-time housekeeping: agent sweep and the mint singleton check.
    pub(crate) fn agent_upkeep(&mut self) {
        self.sweep_agents();
        let m = self.mint_host();
        let ready = self.active(m)
            && self.nodes[m as usize]
                .mint
                .as_ref()
                .is_some_and(|r| r.epoch == self.registry_epoch);
        if ready {
            self.mint_down_since = None;
            return;
        }
        let since = *self.mint_down_since.get_or_insert(self.now);
        if self.now - since > self.sc.mint_policy.block_interval_ms {
            self.checker
                .violation(self.now, "singleton", format!("no mint since {since}"));
        }
    }

    pub(crate) fn on_netops(&mut self) {
        self.netops_snapshot();
        let host = self.registry[&AgentKind::Netops];
        if let Some(next) = self.next_sp(host) {
            if next != host {
                self.migrate_agent(AgentKind::Netops, next);
            }
        }
    }

    fn netops_snapshot(&mut self) {
        let connected = (0..self.nodes.len() as u32).filter(|&n| self.active(n)).count();
        let chain_bytes = self
            .nodes
            .iter()
            .map(|n| n.chain.blocks().iter().map(|b| b.canonical_bytes().len() as u64).sum::<u64>())
            .max()
            .unwrap_or(0);
        let storage: u64 = self
            .nodes
            .iter()
            .filter(|n| n.active())
            .map(|n| n.log.len() as u64 * LOG_ENTRY_BYTES + chain_bytes)
            .sum();
        let rtts: Vec<i64> = self
            .txs
            .iter()
            .filter_map(|t| t.acked_at_ms.map(|a| a - t.issued_at_ms))
            .collect();
        let snap = netops_report(&NetopsInput {
            at_ms: self.now,
            connected_nodes: connected,
            joins: 0,
            departures: self.departures - self.departures_mark,
            window_ms: self.now - self.last_netops_ms,
            bytes_sent: self.bytes_sent - self.bytes_mark,
            storage_bytes: storage,
            ack_round_trips_ms: &rtts,
            outages: self.outages,
            detected_attacks: self.detected_attacks,
            misbehaving: &self.misbehaving,
        });
        self.metrics.push(snap);
        self.departures_mark = self.departures;
        self.bytes_mark = self.bytes_sent;
        self.last_netops_ms = self.now;
        self.note(self.registry[&AgentKind::Netops], "metrics", |_| {});
    }

    pub(crate) fn on_provisioning(&mut self) {
        let host = self.registry[&AgentKind::Provisioning];
        if let Some(next) = self.next_sp(host) {
            if next != host {
                self.migrate_agent(AgentKind::Provisioning, next);
            }
        }
    }

    pub(crate) fn on_reconfigure(&mut self) {
        for n in 0..self.nodes.len() as u32 {
            if !self.nodes[n as usize].alive {
                if let Some(m) = self.fitness.get_mut(&NodeId(n)) {
                    m.uptime_fraction = 0.0;
                    m.chain_present = false;
                }
            }
        }
        let latency = self.latency_fn();
        match reconfigure(
            &self.topology,
            &self.fitness,
            &FitnessWeights::default(),
            &self.overlay_cfg,
            &latency,
            &mut self.topo_rng,
        ) {
            Ok(next) if next != self.topology => {
                self.topology = next;
                self.reset_uplinks();
                self.snapshot_topology("reconfigure");
                self.sweep_agents();
                let m = self.mint_host();
                if !self.is_sp(m) {
                    if let Some(to) = self.mint_successor(m) {
                        self.migrate_mint(m, to);
                    }
                }
            }
            Ok(_) => {}
            Err(e) => self.warnings.push(format!("reconfigure at {}: {e}", self.now)),
        }
        // The configuration agent hands itself to a randomly drawn super peer.
        let sps: Vec<u32> = self
            .topology
            .super_peers()
            .iter()
            .map(|n| n.0)
            .filter(|&n| self.active(n))
            .collect();
        if !sps.is_empty() {
            let next = sps[self.config_rng.gen_range(0..sps.len())];
            if next != self.registry[&AgentKind::Configuration] {
                self.migrate_agent(AgentKind::Configuration, next);
            }
        }
    }

    // ---- rewards ----

    /// Pays every completed dividend day; `last` also pays a trailing
    /// partial day.
    pub(crate) fn reward_upkeep(&mut self, last: bool) {
        let host = self.registry[&AgentKind::Reward];
        if !self.active(host) {
            return;
        }
        loop {
            let height = self.nodes[host as usize].chain.height();
            let day = self.next_reward_day;
            let full = height >= (day + 1) * BLOCKS_PER_DAY;
            let partial = last && height > day * BLOCKS_PER_DAY;
            if !full && !partial {
                return;
            }
            self.pay_day(host, day);
            self.next_reward_day += 1;
            if !full {
                return;
            }
        }
    }

    fn pay_day(&mut self, host: u32, day: u64) {
        let sealers: BTreeMap<Digest, u32> = self
            .seals
            .iter()
            .flat_map(|s| std::iter::once((s.block_hash, s.host)).chain(s.twin.map(|t| (t, s.host))))
            .collect();
        let chain = &self.nodes[host as usize].chain;
        let mint_by_height: BTreeMap<u64, Address> = chain
            .blocks()
            .iter()
            .filter_map(|b| sealers.get(&b.block_hash).map(|&h| (b.height, self.addr(h))))
            .collect();
        let recipients = RewardRecipients {
            default_mint: None,
            mint_by_height,
            super_peers: self.topology.super_peers().iter().map(|n| self.addr(n.0)).collect(),
            full_nodes: self
                .topology
                .full_nodes()
                .filter(|n| self.active(n.0))
                .map(|n| self.addr(n.0))
                .collect(),
        };
        let set = distribute_rewards(
            chain,
            day,
            &self.stakes,
            &self.sc.reward_policy,
            &recipients,
            self.reward_carry,
        );
        if set.paid_total() + set.carried_out != set.block_total + set.carried_in {
            self.checker.violation(
                self.now,
                "reward-conservation",
                format!(
                    "day {day}: paid {} + carried {} != blocks {} + carried in {}",
                    set.paid_total(),
                    set.carried_out,
                    set.block_total,
                    set.carried_in
                ),
            );
        }
        self.reward_carry = set.carried_out;
        let total = set.paid_total();
        self.note(host, "dividends", |r| r.detail = Some(format!("day {day} paid {total}")));
        self.dividends.push(set);
    }

    // ---- end of run ----

    pub(crate) fn finish(mut self) -> RunOutput {
        self.reward_upkeep(true);
        self.netops_snapshot();
        let honest: Vec<u32> = (0..self.nodes.len() as u32)
            .filter(|&n| self.active(n) && !self.nodes[n as usize].byzantine && !self.checker.is_faulty(n))
            .collect();
        let chains: Vec<(u32, &crate::ledger::Chain)> =
            honest.iter().map(|&n| (n, &self.nodes[n as usize].chain)).collect();
        let end = self.now;
        self.checker.check_final_prefix(end, &chains);
        let interval = self.sc.mint_policy.block_interval_ms;
        self.checker
            .check_liveness(self.sc.duration_ms, 3 * interval + self.sc.agents.mint_timeout_ms);
        let best = chains
            .iter()
            .max_by_key(|(n, c)| (c.height(), std::cmp::Reverse(*n)))
            .map(|(n, _)| *n)
            .unwrap_or(0);
        let final_chain = self.nodes[best as usize].chain.clone();
        let fault_free = self.sc.faults.is_empty() && self.sc.byzantine_nodes.is_empty();
        if fault_free {
            self.checker.check_tx_liveness(&self.txs, &final_chain, interval, self.sc.duration_ms);
        }
        let nodes: Vec<NodeSummary> = self
            .nodes
            .iter()
            .map(|n| NodeSummary {
                id: n.id,
                address: n.addr().clone(),
                super_peer: self.topology.is_super_peer(NodeId(n.id)),
                byzantine: n.byzantine,
                alive: n.alive,
                banned: n.banned,
                height: n.chain.height(),
                tip: n.tip_hash(),
                epoch: n.epoch,
                log_len: n.log.len(),
                log_head: n.log.head_digest(),
            })
            .collect();
        let logs: Vec<NodeLog> = self
            .nodes
            .iter()
            .map(|n| NodeLog {
                id: n.id,
                export: n.log.export(n.log.authenticator(&n.key)),
                journal: n.journal.clone(),
                receipts: n.receipts.clone(),
            })
            .collect();
        let (violations, captured_heights) = self.checker.into_parts();
        let trace_records = self.trace.len();
        let (trace_digest, trace_lines) = self.trace.finish();
        let summary = RunSummary {
            name: self.sc.name.clone(),
            seed: self.sc.seed,
            trace_digest,
            trace_records,
            final_height: final_chain.height(),
            sealed: self.seals.len(),
            txs_issued: self.txs.len(),
            txs_included: self.txs.iter().filter(|t| t.status == TxStatus::Included).count(),
            rebuild_checks: self.rebuilds.len(),
            rebuild_mismatches: self.rebuilds.iter().filter(|r| !r.matched).count(),
            violations: violations.clone(),
            recoveries: self.recoveries.len(),
            bans: self.bans.len(),
            captured_heights: captured_heights.clone(),
            warnings: self.warnings.clone(),
        };
        RunOutput {
            trace_digest,
            trace_lines,
            trace_records,
            final_chain,
            seals: self.seals,
            rebuilds: self.rebuilds,
            commits: self.commits,
            reverts: self.reverts,
            txs: self.txs,
            nodes,
            violations,
            dividends: self.dividends,
            metrics: self.metrics,
            faults: self.faults,
            findings: self.findings,
            bans: self.bans,
            recoveries: self.recoveries,
            topologies: self.topologies,
            logs,
            captured_heights,
            warnings: self.warnings,
            summary,
        }
    }
}
