//! The recovery agent: investigations, abandonment rounds and new epochs.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::agents::{recover, AgentKind, FaultReport, MintReplay, MisbehavingNode, RecoveryAction, SystemView};
use crate::consensus::{
    ban_node, ban_proposal, confirm_proposal, replay_attest, BanAuthority, CommitCertificate, Evidence, EvidenceKind,
    ReplayOutcome, Vote, Verdict,
};
use crate::crypto::Digest;
use crate::journal::{Activity, BlockEvent};
use crate::ledger::Chain;
use crate::overlay::{score_all, FitnessWeights, NodeId};
use crate::tamper_log::LogExport;

use super::engine::{Ev, Sim, REPLY_TIMEOUT_MS};
use super::message::{AbandonAnswer, CommitNotice, EpochStart, Msg, ReportKind, SignedProposal};
use super::node::Binding;
use super::record::{BanRecord, RecoveryRecord};

/// Abandonment rounds tried at one height before giving up.
const MAX_ROUNDS: u32 = 5;

/// What an investigation is about. One runs per key at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum InvKey {
    Mint(u64),
    Sp(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    AwaitLog,
    Abandon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Proven,
    Crashed,
    Resync,
}

impl Outcome {
    fn label(self) -> &'static str {
        match self {
            Outcome::Proven => "proven",
            Outcome::Crashed => "crashed",
            Outcome::Resync => "resync",
        }
    }
}

pub(crate) struct Investigation {
    key: InvKey,
    trigger: String,
    suspect: u32,
    started_ms: i64,
    /// Bumped on every stage or round change; timers carry it.
    tick: u32,
    stage: Stage,
    proposals: Vec<SignedProposal>,
    stalled: bool,
    outcome: Option<Outcome>,
    evidence: Option<Evidence>,
    /// Block hashes the suspect is proven to have misused.
    tainted: BTreeSet<Digest>,
    height: u64,
    epoch: u64,
    failed_rounds: u32,
    replies: BTreeMap<u32, AbandonAnswer>,
}

impl Sim {
    pub fn recovery_host(&self) -> u32 {
        self.registry[&AgentKind::Recovery]
    }

    pub(crate) fn on_report(&mut self, n: u32, _src: u32, epoch: u64, kind: ReportKind) {
        let rec = self.recovery_host();
        if n != rec {
            self.send(n, rec, Msg::Report { epoch, kind });
            return;
        }
        let mint = self.mint_host();
        let e = self.registry_epoch;
        let mint_or_sp = |s: u32| if s == mint { InvKey::Mint(e) } else { InvKey::Sp(s) };
        let (key, suspect, trigger) = match &kind {
            ReportKind::Mismatch { proposal } => {
                if proposal.epoch != e {
                    return;
                }
                (InvKey::Mint(e), proposal.proposer, "mismatch")
            }
            ReportKind::Stalled { .. } => {
                if epoch != e {
                    return;
                }
                (InvKey::Mint(e), mint, "stalled")
            }
            ReportKind::AckOrder { later, .. } => {
                let Some(s) = self.node_by_addr(&later.mint_authenticator.log_owner) else {
                    return;
                };
                (mint_or_sp(s), s, "ack-order")
            }
            ReportKind::SuperPeerSilent { sp } => {
                if !self.is_sp(*sp) && *sp != mint {
                    return;
                }
                (mint_or_sp(*sp), *sp, "super-peer-silent")
            }
        };
        if self.nodes[suspect as usize].banned {
            return;
        }
        if let Some(&id) = self.active_inv.get(&key) {
            let inv = self.investigations.get_mut(&id).expect("indexed");
            merge(inv, kind);
            return;
        }
        if self.cooldown.get(&key).is_some_and(|&t| t > self.now) {
            return;
        }
        let id = self.next_inv;
        self.next_inv += 1;
        let mut inv = Investigation {
            key,
            trigger: trigger.into(),
            suspect,
            started_ms: self.now,
            tick: 0,
            stage: Stage::AwaitLog,
            proposals: Vec::new(),
            stalled: false,
            outcome: None,
            evidence: None,
            tainted: BTreeSet::new(),
            height: 0,
            epoch: e,
            failed_rounds: 0,
            replies: BTreeMap::new(),
        };
        merge(&mut inv, kind);
        self.investigations.insert(id, inv);
        self.active_inv.insert(key, id);
        self.note(n, "investigation", |r| {
            r.peer = Some(suspect);
            r.detail = Some(format!("{trigger} #{id}"));
        });
        self.send(n, suspect, Msg::LogRequest { investigation: id });
        self.at(self.now + REPLY_TIMEOUT_MS, Ev::InvestigationTimeout { id, round: 0 });
    }

    pub(crate) fn on_log_request(&mut self, n: u32, src: u32, id: u64) {
        let node = &self.nodes[n as usize];
        let export = node.log.export(node.log.authenticator(&node.key));
        let journal = node.journal.clone();
        self.send(
            n,
            src,
            Msg::LogReply {
                investigation: id,
                export: Box::new(export),
                journal,
            },
        );
    }

    pub(crate) fn on_log_reply(&mut self, n: u32, src: u32, id: u64, export: &LogExport, journal: &[Activity]) {
        let Some(inv) = self.investigations.get(&id) else {
            return;
        };
        if inv.stage != Stage::AwaitLog || inv.suspect != src || n != self.recovery_host() {
            return;
        }
        let found = self.analyze(inv, export, journal);
        let inv = self.investigations.get_mut(&id).expect("present");
        let is_mint = matches!(inv.key, InvKey::Mint(_));
        if let Some((ev, tainted)) = found {
            inv.outcome = Some(Outcome::Proven);
            inv.evidence = Some(ev);
            inv.tainted = tainted;
        } else if inv.stalled && is_mint {
            inv.outcome = Some(Outcome::Resync);
        } else {
            self.close(id, "inconclusive");
            return;
        }
        if is_mint {
            self.start_abandon(id);
        } else {
            self.conclude(id);
        }
    }

    /// Checks a suspect's log: integrity first, then signed proposals it
    /// never logged, then replay against the reference mint.
    fn analyze(
        &self,
        inv: &Investigation,
        export: &LogExport,
        journal: &[Activity],
    ) -> Option<(Evidence, BTreeSet<Digest>)> {
        let owner = self.addr(inv.suspect);
        let report = export.verify();
        let foreign = export.owner != owner || export.head.as_ref().is_some_and(|h| h.log_owner != owner);
        if !report.ok || foreign {
            let ev = Evidence {
                log: owner,
                entry_index: report.first_bad_index.unwrap_or(0),
                kind: EvidenceKind::LogTamper,
            };
            return Some((ev, BTreeSet::new()));
        }
        let sealed: Vec<(usize, u64, u64, Digest)> = journal
            .iter()
            .enumerate()
            .filter_map(|(i, a)| match a {
                Activity::NewBlockHash {
                    event: BlockEvent::Sealed,
                    height,
                    epoch,
                    block_hash,
                    ..
                } => Some((i, *height, *epoch, *block_hash)),
                _ => None,
            })
            .collect();
        for p in &inv.proposals {
            if p.proposer != inv.suspect || !p.verify() {
                continue;
            }
            let (h, e) = (p.block.height, p.epoch);
            let at: Vec<&(usize, u64, u64, Digest)> = sealed.iter().filter(|s| s.1 == h && s.2 == e).collect();
            if at.iter().any(|s| s.3 == p.block.block_hash) {
                continue;
            }
            let mut tainted: BTreeSet<Digest> = at.iter().map(|s| s.3).collect();
            tainted.insert(p.block.block_hash);
            let ev = Evidence {
                log: owner,
                entry_index: at.first().map_or(p.mint_head.head_index, |s| s.0 as u64),
                kind: EvidenceKind::Equivocation,
            };
            return Some((ev, tainted));
        }
        let mut replay = MintReplay::new(Chain::from_genesis(self.genesis.clone()), &self.block_store, owner.clone());
        if let ReplayOutcome::Diverges { index } = replay_attest(&export.entries, journal, &mut replay) {
            if !replay.incomplete() {
                let mut tainted = BTreeSet::new();
                if let Some(Activity::NewBlockHash {
                    event: BlockEvent::Sealed,
                    block_hash,
                    ..
                }) = journal.get(index as usize)
                {
                    tainted.insert(*block_hash);
                }
                let ev = Evidence {
                    log: owner,
                    entry_index: index,
                    kind: EvidenceKind::ReplayDivergence,
                };
                return Some((ev, tainted));
            }
        }
        None
    }

    pub(crate) fn on_investigation_timeout(&mut self, id: u64, tick: u32) {
        let Some(inv) = self.investigations.get_mut(&id) else {
            return;
        };
        if inv.tick != tick {
            return;
        }
        match inv.stage {
            Stage::AwaitLog => {
                inv.outcome = Some(Outcome::Crashed);
                if matches!(inv.key, InvKey::Mint(_)) {
                    self.start_abandon(id);
                } else {
                    self.conclude(id);
                }
            }
            Stage::Abandon => self.evaluate_abandon(id),
        }
    }

    /// Asks every node to give up on the next height in the suspect epoch.
    fn start_abandon(&mut self, id: u64) {
        let rec = self.recovery_host();
        let h = self.nodes[rec as usize].chain.height() + 1;
        let inv = self.investigations.get_mut(&id).expect("present");
        inv.stage = Stage::Abandon;
        inv.tick += 1;
        inv.height = h;
        inv.replies.clear();
        let (round, epoch) = (inv.tick, inv.epoch);
        self.broadcast(
            rec,
            Msg::AbandonRequest {
                investigation: id,
                round,
                height: h,
                epoch,
            },
        );
        self.at(self.now + REPLY_TIMEOUT_MS, Ev::InvestigationTimeout { id, round });
    }

    pub(crate) fn on_abandon_request(&mut self, n: u32, src: u32, id: u64, round: u32, h: u64, e: u64) {
        let now = self.now;
        let node = &mut self.nodes[n as usize];
        let answer = if node.chain.height() >= h {
            match node.notices.get(h as usize).cloned().flatten() {
                Some(notice) => AbandonAnswer::Committed {
                    notice: Box::new((*notice).clone()),
                },
                None => return,
            }
        } else {
            match node.bindings.get(&(h, e)) {
                Some(Binding::Confirm { hash, vote }) => AbandonAnswer::Voted {
                    block_hash: *hash,
                    vote: Box::new(vote.clone()),
                },
                Some(Binding::Abandon) => AbandonAnswer::Abandoned,
                None => {
                    node.bindings.insert((h, e), Binding::Abandon);
                    let to = self.nodes[src as usize].addr().clone();
                    self.nodes[n as usize].record(
                        now,
                        &to,
                        Activity::Vote {
                            proposal_id: confirm_proposal(h, e, &Digest::ZERO),
                            yes: false,
                        },
                    );
                    AbandonAnswer::Abandoned
                }
            }
        };
        self.send(
            n,
            src,
            Msg::AbandonReply {
                investigation: id,
                round,
                answer,
            },
        );
    }

    pub(crate) fn on_abandon_reply(&mut self, n: u32, src: u32, id: u64, round: u32, answer: AbandonAnswer) {
        let host = self.recovery_host();
        let Some(inv) = self.investigations.get_mut(&id) else {
            return;
        };
        if inv.stage != Stage::Abandon || inv.tick != round || n != host {
            return;
        }
        let h = inv.height;
        if let AbandonAnswer::Committed { notice } = &answer {
            let notice = Rc::new((**notice).clone());
            self.on_commit_notice(n, notice.clone(), Some(src), true);
            if self.nodes[n as usize].chain.height() >= h {
                let msg = Rc::new(Msg::Commit(Box::new((*notice).clone())));
                for dst in 0..self.nodes.len() as u32 {
                    if dst != n && dst != src {
                        self.send_rc(n, dst, msg.clone());
                    }
                }
                self.start_abandon(id);
            }
            return;
        }
        inv.replies.insert(src, answer);
        let replied = inv.replies.len();
        let live = (0..self.nodes.len() as u32).filter(|&x| self.active(x)).count();
        if replied >= live {
            self.evaluate_abandon(id);
        }
    }

    fn evaluate_abandon(&mut self, id: u64) {
        let rec = self.recovery_host();
        let inv = self.investigations.get_mut(&id).expect("present");
        let total = self.stakes.total() as u128;
        let mut replied = 0u128;
        let mut voted: BTreeMap<Digest, (u128, Vec<Vote>)> = BTreeMap::new();
        for (&from, a) in &inv.replies {
            let s = self.stakes.stake_of(self.nodes[from as usize].addr()) as u128;
            replied += s;
            if let AbandonAnswer::Voted { block_hash, vote } = a {
                let id_ok = vote.proposal_id == confirm_proposal(inv.height, inv.epoch, block_hash);
                if id_ok && vote.verify() && vote.voter == *self.nodes[from as usize].addr() {
                    let slot = voted.entry(*block_hash).or_default();
                    slot.0 += s;
                    slot.1.push((**vote).clone());
                }
            }
        }
        let unreplied = total.saturating_sub(replied);
        // A block more than half the stake already confirmed can still be
        // certified; finish it rather than abandon it.
        for (hash, (stake, votes)) in &voted {
            if 2 * stake <= total {
                continue;
            }
            let node = &self.nodes[rec as usize];
            let known = node
                .seen_proposals
                .get(hash)
                .map(|p| (**p).clone())
                .or_else(|| inv.proposals.iter().find(|p| p.block.block_hash == *hash).cloned());
            let Some(p) = known else {
                continue;
            };
            if p.block.height != inv.height || p.block.prev_hash != node.tip_hash() {
                continue;
            }
            let notice = Rc::new(CommitNotice {
                cert: CommitCertificate {
                    height: inv.height,
                    epoch: inv.epoch,
                    block_hash: *hash,
                    votes: votes.clone(),
                },
                block: p.block,
                proposer: p.proposer,
            });
            self.certified(rec, notice);
            self.start_abandon(id);
            return;
        }
        let safe = 2 * unreplied <= total && voted.values().all(|(s, _)| 2 * (s + unreplied) <= total);
        if safe {
            self.conclude(id);
            return;
        }
        inv.failed_rounds += 1;
        if inv.failed_rounds >= MAX_ROUNDS {
            let h = inv.height;
            self.warnings.push(format!("investigation {id}: height {h} could not be abandoned"));
            self.close(id, "stuck");
            return;
        }
        self.start_abandon(id);
    }

    /// Best replacement candidates by fitness: live full nodes only.
    pub fn ranked_candidates(&self) -> Vec<NodeId> {
        let mut scored = score_all(&self.fitness, &FitnessWeights::default());
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .map(|(id, _)| id)
            .filter(|id| self.active(id.0) && !self.is_sp(id.0) && self.topology.plan_of(*id).is_some())
            .collect()
    }

    /// Bans `target` on a proven verdict and repairs the overlay. Moving the
    /// mint off a banned host is the caller's job.
    pub fn ban(&mut self, target: u32, evidence: Evidence, reason: &str) {
        if self.nodes[target as usize].banned {
            return;
        }
        let addr = self.addr(target);
        let verdict = Verdict::proven(ban_proposal(&addr), evidence);
        let cands = self.ranked_candidates();
        let latency = self.latency_fn();
        let mut replaced_by = None;
        match ban_node(
            &self.topology,
            NodeId(target),
            &addr,
            BanAuthority::Verdict(&verdict),
            &cands,
            &latency,
            &mut self.topo_rng,
        ) {
            Ok(out) => {
                self.topology = out.topology;
                replaced_by = out.replaced_by.map(|n| n.0);
            }
            Err(e) => self.warnings.push(format!("ban of node {target}: {e}")),
        }
        self.nodes[target as usize].banned = true;
        self.fitness.remove(&NodeId(target));
        self.departures += 1;
        self.misbehaving.push(MisbehavingNode {
            node: NodeId(target),
            address: addr.clone(),
            verdict: verdict.proposal_id,
            reason: reason.into(),
        });
        self.bans.push(BanRecord {
            at_ms: self.now,
            node: target,
            address: addr,
            replaced_by,
            reason: reason.into(),
        });
        self.note(target, "ban", |r| r.detail = Some(reason.into()));
        self.reset_uplinks();
        self.snapshot_topology("ban");
        self.sweep_agents();
    }

    /// Starts the next mint epoch on `host`, signed by the recovery host.
    pub(crate) fn new_epoch(&mut self, host: u32, revert: Option<Digest>) -> usize {
        let rec = self.recovery_host();
        self.registry_epoch += 1;
        self.registry.insert(AgentKind::Mint, host);
        let node = &self.nodes[rec as usize];
        let carried: Vec<_> = node.pool.values().cloned().collect();
        let count = carried.len();
        let es = EpochStart::sign(self.registry_epoch, revert, host, carried, rec, &node.key);
        let epoch = self.registry_epoch;
        self.note(rec, "epoch-start", |r| {
            r.peer = Some(host);
            r.detail = Some(format!("epoch {epoch}"));
        });
        self.broadcast(rec, Msg::EpochStart(Box::new(es)));
        count
    }

    fn close(&mut self, id: u64, outcome: &str) {
        let Some(inv) = self.investigations.remove(&id) else {
            return;
        };
        self.active_inv.remove(&inv.key);
        let interval = self.sc.mint_policy.block_interval_ms;
        self.cooldown.insert(inv.key, self.now + interval);
        self.recoveries.push(RecoveryRecord {
            investigation: id,
            started_ms: inv.started_ms,
            concluded_ms: self.now,
            trigger: inv.trigger,
            suspect: inv.suspect,
            outcome: outcome.into(),
            evidence: None,
            fault: None,
            plan: None,
            new_epoch: None,
            new_mint: None,
            reverted: None,
            carried: 0,
        });
        let rec = self.recovery_host();
        let outcome = outcome.to_owned();
        self.note(rec, "investigation-closed", |r| r.detail = Some(format!("#{id} {outcome}")));
    }

    fn conclude(&mut self, id: u64) {
        let Some(inv) = self.investigations.remove(&id) else {
            return;
        };
        self.active_inv.remove(&inv.key);
        let interval = self.sc.mint_policy.block_interval_ms;
        self.cooldown.insert(inv.key, self.now + interval);
        let outcome = inv.outcome.expect("set before concluding");
        let rec = self.recovery_host();
        let suspect = inv.suspect;
        let is_mint = matches!(inv.key, InvKey::Mint(_));
        let mut fault = None;
        if outcome == Outcome::Proven {
            let ev = inv.evidence.clone().expect("proven carries evidence");
            let reason = match ev.kind {
                EvidenceKind::LogTamper => "log-tamper",
                EvidenceKind::Equivocation => "equivocation",
                EvidenceKind::ReplayDivergence => "replay-divergence",
                EvidenceKind::ReceiptContradiction => "receipt-contradiction",
            };
            self.distrusted.insert(suspect);
            self.ban(suspect, ev, reason);
            if is_mint {
                let node = &self.nodes[rec as usize];
                let committed = inv.tainted.contains(&node.tip_hash()) && node.tip_epoch() == inv.epoch;
                let height = if committed { node.chain.height() } else { inv.height };
                fault = Some(FaultReport::DefectiveMint {
                    host: NodeId(suspect),
                    height,
                    committed,
                });
            }
        } else if outcome == Outcome::Crashed {
            self.distrusted.insert(suspect);
            fault = Some(if is_mint {
                FaultReport::MintCrashed { host: NodeId(suspect) }
            } else {
                FaultReport::FaultySuperPeer { node: NodeId(suspect) }
            });
        }
        let live: BTreeSet<NodeId> = (0..self.nodes.len() as u32)
            .filter(|&x| self.active(x))
            .map(NodeId)
            .collect();
        let hosts: BTreeMap<AgentKind, NodeId> = self.registry.iter().map(|(&k, &v)| (k, NodeId(v))).collect();
        let cands = self.ranked_candidates();
        let faults: Vec<FaultReport> = fault.iter().cloned().collect();
        let view = SystemView {
            topology: &self.topology,
            live: &live,
            agent_hosts: &hosts,
            candidates: &cands,
        };
        let plan = match recover(&faults, &view) {
            Ok(p) => Some(p),
            Err(e) => {
                self.warnings.push(format!("investigation {id}: {e}"));
                None
            }
        };
        let mut reverted = None;
        let mut new_mint = None;
        let mut topo_changed = false;
        for a in plan.iter().flat_map(|p| p.actions.iter()) {
            match *a {
                RecoveryAction::RevertBlock { height } => {
                    let node = &self.nodes[rec as usize];
                    if node.chain.height() == height {
                        let hash = node.tip_hash();
                        self.revert_tip(rec, "recovery");
                        reverted = Some((height, hash));
                    }
                }
                RecoveryAction::PromoteBackupMint { node } => new_mint = Some(node.0),
                RecoveryAction::DisableSuperPeer { .. } => {}
                RecoveryAction::ReplaceSuperPeer { old, new } => {
                    let latency = self.latency_fn();
                    match self.topology.replace_super_peer(old, new, &latency, &mut self.topo_rng) {
                        Ok(_) => topo_changed = true,
                        Err(e) => self.warnings.push(format!("replace {old} by {new}: {e}")),
                    }
                }
                RecoveryAction::HandoffAgent { kind, to } => {
                    if kind != AgentKind::Mint {
                        self.migrate_agent(kind, to.0);
                    }
                }
            }
        }
        if topo_changed {
            self.reset_uplinks();
            self.snapshot_topology("recovery");
            self.sweep_agents();
        }
        let mut new_epoch = None;
        let mut carried = 0;
        if is_mint && inv.epoch == self.registry_epoch {
            let host = match outcome {
                Outcome::Resync => Some(self.mint_host()),
                _ => new_mint.or_else(|| self.mint_successor(suspect)),
            };
            if let Some(host) = host {
                carried = self.new_epoch(host, reverted.map(|(_, h)| h));
                new_epoch = Some(self.registry_epoch);
                new_mint = Some(host);
            }
        }
        if outcome == Outcome::Proven {
            self.detected_attacks += 1;
        }
        self.recoveries.push(RecoveryRecord {
            investigation: id,
            started_ms: inv.started_ms,
            concluded_ms: self.now,
            trigger: inv.trigger,
            suspect,
            outcome: outcome.label().into(),
            evidence: inv.evidence.map(|e| format!("{:?} at entry {}", e.kind, e.entry_index)),
            fault,
            plan,
            new_epoch,
            new_mint,
            reverted,
            carried,
        });
        self.note(rec, "recovery", |r| {
            r.peer = Some(suspect);
            r.detail = Some(format!("#{id} {}", outcome.label()));
        });
    }
}

fn merge(inv: &mut Investigation, kind: ReportKind) {
    match kind {
        ReportKind::Mismatch { proposal } => {
            if !inv.proposals.iter().any(|p| p.block.block_hash == proposal.block.block_hash) {
                inv.proposals.push(*proposal);
            }
        }
        ReportKind::Stalled { .. } => inv.stalled = true,
        _ => {}
    }
}
