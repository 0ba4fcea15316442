//! Event loop, setup and message routing.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{initial_placement, AgentKind, AgentState, DividendSet, MetricsSnapshot, MintCore, MisbehavingNode};
use crate::consensus::StakeTable;
use crate::crypto::{keygen_with, Address, Digest, KeyPair};
use crate::journal::{Activity, HandoffDirection};
use crate::ledger::{genesis_block, stake_snapshot, Block, Chain};
use crate::overlay::{build_topology, FitnessMetrics, FitnessWeights, NodeId, OverlayConfig, Topology};

use super::check::Checker;
use super::fault::{FaultRecord, FaultStatus};
use super::message::Msg;
use super::net::{pair_latency, Net};
use super::node::{MintRole, Node};
use super::record::*;
use super::recovery::{InvKey, Investigation};
use super::rng::{node_key_seed, stream};
use super::scenario::Scenario;
use super::trace::{Direction, TraceRecord, TraceSink};
use super::upkeep::Poll;
use super::{RunOptions, SimError};

pub(crate) const SUBMIT_TIMEOUT_MS: i64 = 5_000;
pub(crate) const MAX_SUBMIT_ATTEMPTS: u32 = 5;
pub(crate) const REPLY_TIMEOUT_MS: i64 = 5_000;

#[derive(Debug, Clone)]
pub(crate) enum Ev {
    Deliver { src: u32, dst: u32, hops: u32, msg: Rc<Msg> },
    Seal,
    StallCheck { boundary: i64 },
    Issue { node: u32 },
    SubmitTimeout { node: u32, txid: Digest, attempt: u32 },
    InclusionCheck { node: u32, txid: Digest, attempt: u32 },
    Fault { index: usize },
    PartitionEnd { index: usize },
    InvestigationTimeout { id: u64, round: u32 },
    ProbeTimeout { poll: u64 },
    AuditDay,
    AuditPoll { kind: AgentKind, target: u32 },
    Netops,
    Provisioning,
    Reconfigure,
}

struct Queued {
    t: i64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        (self.t, self.seq) == (o.t, o.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Queued {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.t, self.seq).cmp(&(o.t, o.seq))
    }
}

pub(crate) struct Sim {
    pub sc: Scenario,
    pub now: i64,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    pub nodes: Vec<Node>,
    pub stakes: StakeTable,
    pub genesis: Block,
    pub reward_addr: Address,
    pub topology: Topology,
    pub overlay_cfg: OverlayConfig,
    pub fitness: BTreeMap<NodeId, FitnessMetrics>,
    pub registry: BTreeMap<AgentKind, u32>,
    pub agent_states: BTreeMap<AgentKind, AgentState>,
    pub registry_epoch: u64,
    /// Nodes recovery will not hand the mint to again.
    pub distrusted: BTreeSet<u32>,
    pub net: Net,
    /// Active partitions: (fault index, isolated side).
    pub partitions: Vec<(usize, BTreeSet<u32>)>,
    pub partition_windows: Vec<(i64, i64)>,
    pub trace: TraceSink,
    pub workload_rngs: Vec<ChaCha8Rng>,
    pub config_rng: ChaCha8Rng,
    pub audit_rng: ChaCha8Rng,
    pub topo_rng: ChaCha8Rng,
    /// Every block any node committed, for replay.
    pub block_store: BTreeMap<Digest, Block>,
    pub investigations: BTreeMap<u64, Investigation>,
    pub active_inv: BTreeMap<InvKey, u64>,
    pub cooldown: BTreeMap<InvKey, i64>,
    pub next_inv: u64,
    pub polls: BTreeMap<u64, Poll>,
    pub next_poll: u64,
    pub audit_day: u64,
    pub next_reward_day: u64,
    pub reward_carry: u64,
    pub mint_down_since: Option<i64>,
    pub checker: Checker,
    // Accounting.
    pub bytes_sent: u64,
    pub bytes_mark: u64,
    pub departures: u64,
    pub departures_mark: u64,
    pub outages: u64,
    pub detected_attacks: u64,
    pub misbehaving: Vec<MisbehavingNode>,
    pub last_netops_ms: i64,
    pub tampered: BTreeSet<u32>,
    pub corrupted: BTreeSet<u32>,
    // Records.
    pub tx_index: BTreeMap<Digest, usize>,
    pub txs: Vec<TxRecord>,
    pub seals: Vec<SealRecord>,
    pub rebuilds: Vec<RebuildRecord>,
    pub commits: Vec<CommitRecord>,
    pub reverts: Vec<RevertRecord>,
    pub dividends: Vec<DividendSet>,
    pub metrics: Vec<MetricsSnapshot>,
    pub faults: Vec<FaultRecord>,
    pub findings: Vec<FindingRecord>,
    pub bans: Vec<BanRecord>,
    pub recoveries: Vec<RecoveryRecord>,
    pub topologies: Vec<TopologySnapshot>,
    pub warnings: Vec<String>,
}

fn random_fitness(rng: &mut ChaCha8Rng) -> FitnessMetrics {
    FitnessMetrics {
        uptime_fraction: rng.gen_range(0.9..=1.0),
        bandwidth_in: rng.gen_range(10.0..100.0),
        bandwidth_out: rng.gen_range(10.0..100.0),
        latency_ms: rng.gen_range(20.0..200.0),
        redundancy_degree: rng.gen_range(1.0..5.0),
        cpu_score: rng.gen_range(0.1..=1.0),
        chain_present: true,
    }
}

impl Sim {
    pub fn new(sc: &Scenario, opts: &RunOptions) -> Result<Self, SimError> {
        sc.validate()?;
        let n = sc.node_count;
        let keys: Vec<KeyPair> = (0..n as u32)
            .map(|i| keygen_with(sc.crypto, &node_key_seed(sc.seed, i)))
            .collect();
        let stake_v = sc.stake_vector();
        let reward_addr = Address::from_label("reward");
        let authority = keygen_with(sc.crypto, &node_key_seed(sc.seed, u32::MAX));
        let stakers: Vec<(&KeyPair, u64)> = keys
            .iter()
            .zip(&stake_v)
            .filter(|(_, s)| **s > 0)
            .map(|(k, s)| (k, *s))
            .collect();
        let genesis = genesis_block(&stakers, sc.workload.utxos_per_node, &reward_addr, &authority);
        let stakes = StakeTable::new(stake_snapshot(&Chain::from_genesis(genesis.clone()), 0..1));

        let mut fit_rng = stream(sc.seed, "fitness");
        let fitness: BTreeMap<NodeId, FitnessMetrics> =
            (0..n as u32).map(|i| (NodeId(i), random_fitness(&mut fit_rng))).collect();
        let overlay_cfg = sc.overlay_config();
        let mut topo_rng = stream(sc.seed, "topology");
        let (lat_cfg, seed) = (sc.latency.clone(), sc.seed);
        let latency = move |a: NodeId, b: NodeId| pair_latency(&lat_cfg, seed, a.0, b.0);
        let (topology, warning) = build_topology(
            &fitness,
            &FitnessWeights::default(),
            &overlay_cfg,
            &latency,
            &mut topo_rng,
        )?;

        let byz: BTreeSet<u32> = sc.byzantine_nodes.iter().copied().collect();
        let nodes: Vec<Node> = keys
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                let id = i as u32;
                let skew = sc.clock_skews_ms.get(&id).copied().unwrap_or(0);
                Node::new(id, k, genesis.clone(), skew, byz.contains(&id))
            })
            .collect();

        let sps: Vec<NodeId> = topology.super_peers().iter().copied().collect();
        let registry: BTreeMap<AgentKind, u32> =
            initial_placement(&sps).into_iter().map(|(k, v)| (k, v.0)).collect();

        let mut sim = Sim {
            sc: sc.clone(),
            now: 0,
            queue: BinaryHeap::new(),
            seq: 0,
            nodes,
            stakes,
            genesis,
            reward_addr,
            topology,
            overlay_cfg,
            fitness,
            registry,
            agent_states: BTreeMap::new(),
            registry_epoch: 0,
            distrusted: BTreeSet::new(),
            net: Net::new(sc.latency.clone(), sc.overlay.outer_rings, stream(sc.seed, "net")),
            partitions: Vec::new(),
            partition_windows: Vec::new(),
            trace: TraceSink::new(opts.keep_trace_lines),
            workload_rngs: (0..n).map(|i| stream(sc.seed, &format!("workload/{i}"))).collect(),
            config_rng: stream(sc.seed, "config"),
            audit_rng: stream(sc.seed, "audit"),
            topo_rng,
            block_store: BTreeMap::new(),
            investigations: BTreeMap::new(),
            active_inv: BTreeMap::new(),
            cooldown: BTreeMap::new(),
            next_inv: 1,
            polls: BTreeMap::new(),
            next_poll: 1,
            audit_day: 0,
            next_reward_day: 0,
            reward_carry: 0,
            mint_down_since: None,
            checker: Checker::new(n),
            bytes_sent: 0,
            bytes_mark: 0,
            departures: 0,
            departures_mark: 0,
            outages: 0,
            detected_attacks: 0,
            misbehaving: Vec::new(),
            last_netops_ms: 0,
            tampered: BTreeSet::new(),
            corrupted: BTreeSet::new(),
            tx_index: BTreeMap::new(),
            txs: Vec::new(),
            seals: Vec::new(),
            rebuilds: Vec::new(),
            commits: Vec::new(),
            reverts: Vec::new(),
            dividends: Vec::new(),
            metrics: Vec::new(),
            faults: sc
                .faults
                .iter()
                .enumerate()
                .map(|(index, f)| FaultRecord {
                    index,
                    at_ms: f.at_ms,
                    mode: f.mode.clone(),
                    node: None,
                    status: FaultStatus::TargetMissing,
                    fired_at_ms: None,
                    height: None,
                })
                .collect(),
            findings: Vec::new(),
            bans: Vec::new(),
            recoveries: Vec::new(),
            topologies: Vec::new(),
            warnings: warning.into_iter().collect(),
        };
        for &b in &sc.byzantine_nodes {
            sim.checker.mark_faulty(b);
        }
        sim.reset_uplinks();
        sim.snapshot_topology("initial");
        sim.place_agents();
        sim.schedule_initial();
        let mut r = TraceRecord::new(0, 0, Direction::Internal, "genesis");
        r.block = Some(sim.genesis.block_hash);
        r.height = Some(0);
        sim.trace.push(r);
        Ok(sim)
    }

    fn place_agents(&mut self) {
        let registry = self.registry.clone();
        for (kind, host) in registry {
            let key = self.nodes[host as usize].key.clone();
            let state = if kind == AgentKind::Mint {
                AgentState::genesis(
                    kind,
                    NodeId(host),
                    &MintCore::new(self.sc.mint_policy.clone(), self.reward_addr.clone()),
                    &key,
                )
            } else {
                AgentState::genesis(kind, NodeId(host), &kind.label(), &key)
            };
            let me = key.address.clone();
            self.nodes[host as usize].record(
                0,
                &me,
                Activity::AgentHandoff {
                    direction: HandoffDirection::Incoming,
                    state: state.clone(),
                },
            );
            if kind == AgentKind::Mint {
                let core = MintCore::new(self.sc.mint_policy.clone(), self.reward_addr.clone());
                self.nodes[host as usize].mint = Some(MintRole::new(core, 0));
            }
            self.agent_states.insert(kind, state);
        }
    }

    fn schedule_initial(&mut self) {
        let sc = self.sc.clone();
        let interval = sc.mint_policy.block_interval_ms;
        let mut t = interval;
        while t <= sc.duration_ms {
            self.at(t, Ev::Seal);
            self.at(t + sc.agents.mint_timeout_ms, Ev::StallCheck { boundary: t });
            t += interval;
        }
        for i in 0..sc.node_count as u32 {
            if let Some(gap) = self.issue_gap(i) {
                if gap < sc.issue_until() {
                    self.at(gap, Ev::Issue { node: i });
                }
            }
        }
        for (index, f) in sc.faults.iter().enumerate() {
            self.at(f.at_ms, Ev::Fault { index });
        }
        if sc.agents.audit_enabled {
            let mut d = 0;
            while d < sc.duration_ms {
                self.at(d, Ev::AuditDay);
                d += sc.agents.audit_period_ms;
            }
        }
        let periodic = [
            (sc.agents.netops_period_ms, Ev::Netops),
            (sc.agents.provisioning_period_ms, Ev::Provisioning),
            (sc.overlay.reconfigure_period_ms, Ev::Reconfigure),
        ];
        for (period, ev) in periodic {
            if period <= 0 {
                continue;
            }
            let mut t = period;
            while t <= sc.duration_ms {
                self.at(t, ev.clone());
                t += period;
            }
        }
    }

    /// Exponential inter-arrival gap for node `i`'s workload, in ms.
    pub fn issue_gap(&mut self, i: u32) -> Option<i64> {
        let rate = self.sc.workload.tx_per_node_per_hour / 3_600_000.0;
        if rate <= 0.0 {
            return None;
        }
        let u: f64 = self.workload_rngs[i as usize].gen();
        Some((-(1.0 - u).ln() / rate).ceil().max(1.0) as i64)
    }

    pub fn at(&mut self, t: i64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse(Queued { t, seq: self.seq, ev }));
    }

    pub fn end_ms(&self) -> i64 {
        self.sc.duration_ms + self.sc.drain_ms
    }

    pub fn run_loop(&mut self) {
        let end = self.end_ms();
        while let Some(Reverse(q)) = self.queue.pop() {
            if q.t > end {
                break;
            }
            self.now = q.t;
            self.dispatch(q.ev);
        }
        self.now = end;
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver { src, dst, hops, msg } => self.deliver(src, dst, hops, msg),
            Ev::Seal => self.on_seal(),
            Ev::StallCheck { boundary } => self.on_stall_check(boundary),
            Ev::Issue { node } => self.on_issue(node),
            Ev::SubmitTimeout { node, txid, attempt } => self.on_submit_timeout(node, txid, attempt),
            Ev::InclusionCheck { node, txid, attempt } => self.on_inclusion_check(node, txid, attempt),
            Ev::Fault { index } => self.on_fault(index),
            Ev::PartitionEnd { index } => self.on_partition_end(index),
            Ev::InvestigationTimeout { id, round } => self.on_investigation_timeout(id, round),
            Ev::ProbeTimeout { poll } => self.on_probe_timeout(poll),
            Ev::AuditDay => self.on_audit_day(),
            Ev::AuditPoll { kind, target } => self.on_audit_poll(kind, target),
            Ev::Netops => self.on_netops(),
            Ev::Provisioning => self.on_provisioning(),
            Ev::Reconfigure => self.on_reconfigure(),
        }
    }

    // ---- topology helpers ----

    pub fn is_sp(&self, n: u32) -> bool {
        self.topology.is_super_peer(NodeId(n))
    }

    pub fn uplink_of(&self, n: u32) -> Option<u32> {
        if self.is_sp(n) {
            None
        } else {
            self.nodes[n as usize].uplink
        }
    }

    pub fn reset_uplinks(&mut self) {
        for i in 0..self.nodes.len() {
            let plan = self.topology.plan_of(NodeId(i as u32)).map(|p| p.primary.0);
            self.nodes[i].uplink = if self.is_sp(i as u32) { None } else { plan };
        }
    }

    /// Moves a full node to the next super peer of its connection plan.
    pub fn rotate_uplink(&mut self, n: u32) -> Option<u32> {
        let plan = self.topology.plan_of(NodeId(n))?.all();
        let cur = self.nodes[n as usize].uplink;
        let pos = plan.iter().position(|s| Some(s.0) == cur).map_or(0, |p| p + 1);
        let next = plan[pos % plan.len()].0;
        self.nodes[n as usize].uplink = Some(next);
        Some(next)
    }

    pub fn snapshot_topology(&mut self, reason: &str) {
        if let Err(v) = self.topology.check_invariants() {
            self.checker.violation(self.now, "topology", format!("{reason}: {v:?}"));
        }
        self.topologies.push(TopologySnapshot {
            at_ms: self.now,
            reason: reason.into(),
            topology: self.topology.clone(),
        });
        let mut r = TraceRecord::new(self.now, 0, Direction::Internal, "topology");
        r.detail = Some(reason.into());
        self.trace.push(r);
    }

    pub fn latency_fn(&self) -> impl Fn(NodeId, NodeId) -> u64 {
        let (cfg, seed) = (self.sc.latency.clone(), self.sc.seed);
        move |a: NodeId, b: NodeId| pair_latency(&cfg, seed, a.0, b.0)
    }

    pub fn separated(&self, a: u32, b: u32) -> bool {
        self.partitions.iter().any(|(_, s)| s.contains(&a) != s.contains(&b))
    }

    pub fn active(&self, n: u32) -> bool {
        self.nodes[n as usize].active()
    }

    pub fn addr(&self, n: u32) -> Address {
        self.nodes[n as usize].addr().clone()
    }

    pub fn node_by_addr(&self, a: &Address) -> Option<u32> {
        self.nodes.iter().position(|n| n.addr() == a).map(|i| i as u32)
    }

    /// Why a message from `src` to `dst` cannot currently travel, if it cannot.
    fn blocked(&self, path: &[u32]) -> Option<&'static str> {
        let (src, dst) = (path[0], *path.last().expect("non-empty"));
        if self.nodes[src as usize].banned || self.nodes[dst as usize].banned {
            return Some("banned");
        }
        if path[1..path.len().saturating_sub(1)].iter().any(|&r| !self.active(r)) {
            return Some("relay-down");
        }
        if path.iter().any(|&p| self.separated(src, p)) {
            return Some("partition");
        }
        None
    }

    // ---- messaging ----

    pub fn send(&mut self, src: u32, dst: u32, msg: Msg) {
        self.send_rc(src, dst, Rc::new(msg));
    }

    pub fn send_rc(&mut self, src: u32, dst: u32, msg: Rc<Msg>) {
        if src == dst {
            self.at(self.now, Ev::Deliver { src, dst, hops: 0, msg });
            return;
        }
        let path = Net::path(src, dst, &|n| self.uplink_of(n));
        let mut r = TraceRecord::new(self.now, src, Direction::Send, msg.label());
        r.peer = Some(dst);
        r.tx = msg.tx_ref();
        if let Some((b, h)) = msg.block_ref() {
            r.block = Some(b);
            r.height = Some(h);
        }
        if let Some(reason) = self.blocked(&path) {
            r.dir = Direction::Drop;
            r.detail = Some(reason.into());
            self.trace.push(r);
            return;
        }
        let topo = &self.topology;
        let routed = self.net.schedule(self.now, &path, &|n| !topo.is_super_peer(NodeId(n)));
        self.bytes_sent += msg.approx_size();
        r.hops = Some(routed.hops);
        if r.tx.is_some() {
            r.route = Some(routed.route);
        }
        self.trace.push(r);
        self.at(
            routed.deliver_at,
            Ev::Deliver {
                src,
                dst,
                hops: routed.hops,
                msg,
            },
        );
    }

    /// Sends to every node, the sender included.
    pub fn broadcast(&mut self, src: u32, msg: Msg) {
        let msg = Rc::new(msg);
        for dst in 0..self.nodes.len() as u32 {
            self.send_rc(src, dst, msg.clone());
        }
    }

    fn deliver(&mut self, src: u32, dst: u32, hops: u32, msg: Rc<Msg>) {
        let reason = if !self.nodes[dst as usize].alive {
            Some("crashed")
        } else if self.nodes[dst as usize].banned {
            Some("banned")
        } else if self.separated(src, dst) {
            Some("partition")
        } else {
            None
        };
        if src != dst || reason.is_some() {
            let mut r = TraceRecord::new(self.now, dst, Direction::Recv, msg.label());
            r.peer = Some(src);
            r.tx = msg.tx_ref();
            r.hops = Some(hops);
            if let Some((b, h)) = msg.block_ref() {
                r.block = Some(b);
                r.height = Some(h);
            }
            if let Some(reason) = reason {
                r.dir = Direction::Drop;
                r.detail = Some(reason.into());
            }
            self.trace.push(r);
        }
        if reason.is_some() {
            return;
        }
        self.nodes[dst as usize].last_rx = self.now;
        self.handle(src, dst, hops, &msg);
    }

    fn handle(&mut self, src: u32, n: u32, hops: u32, msg: &Msg) {
        match msg {
            Msg::Submit {
                tx,
                issuer,
                attempt,
                prior_hops,
            } => self.on_submit(n, tx.clone(), *issuer, *attempt, prior_hops + hops),
            Msg::Acked {
                acked,
                issuer,
                epoch,
                inbound_hops,
                direct,
            } => self.on_acked(n, acked.clone(), *issuer, *epoch, inbound_hops + hops, *direct),
            Msg::Rejected { txid, reason, issuer, .. } => self.on_rejected(n, *txid, *reason, *issuer),
            Msg::Proposal(p) => self.on_proposal(n, Rc::new((**p).clone())),
            Msg::Confirm {
                height,
                epoch,
                block_hash,
                vote,
            } => self.on_confirm(n, src, *height, *epoch, *block_hash, (**vote).clone()),
            Msg::Commit(notice) => self.on_commit_notice(n, Rc::new((**notice).clone()), Some(src), true),
            Msg::Report { epoch, kind } => self.on_report(n, src, *epoch, kind.clone()),
            Msg::LogRequest { investigation } => self.on_log_request(n, src, *investigation),
            Msg::LogReply {
                investigation,
                export,
                journal,
            } => self.on_log_reply(n, src, *investigation, export, journal),
            Msg::AbandonRequest {
                investigation,
                round,
                height,
                epoch,
            } => self.on_abandon_request(n, src, *investigation, *round, *height, *epoch),
            Msg::AbandonReply {
                investigation,
                round,
                answer,
            } => self.on_abandon_reply(n, src, *investigation, *round, answer.clone()),
            Msg::EpochStart(e) => self.on_epoch_start(n, e),
            Msg::Handoff { state, epoch } => self.on_handoff(n, state, *epoch),
            Msg::Probe {
                poll,
                at_height,
                offsets,
            } => self.on_probe(n, src, *poll, *at_height, offsets),
            Msg::ProbeReply { poll, response } => self.on_probe_reply(n, src, *poll, response),
            Msg::SyncRequest { from_height } => self.on_sync_request(n, src, *from_height),
            Msg::SyncReply { notices } => {
                for notice in notices {
                    self.on_commit_notice(n, Rc::new(notice.clone()), Some(src), false);
                }
            }
        }
    }

    /// Internal trace record for `node`, stamped with its log head.
    pub fn note(&mut self, node: u32, kind: &str, fill: impl FnOnce(&mut TraceRecord)) {
        let mut r = TraceRecord::new(self.now, node, Direction::Internal, kind);
        r.head = Some(self.nodes[node as usize].log.head_digest());
        fill(&mut r);
        self.trace.push(r);
    }
}
