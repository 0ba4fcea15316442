//! Transaction flow, sealing, voting, commits, epochs and mint migration.

use std::rc::Rc;

use rand::Rng;

use crate::agents::{accept_handoff, handoff, select_valid_for_seal, AckDecision, AgentKind, AgentState, MintCore};
use crate::consensus::{confirm_proposal, tally_votes, Choice, CommitCertificate, TallyOutcome, Vote};
use crate::crypto::{address_of, Digest};
use crate::journal::{Activity, BlockEvent, HandoffDirection, RejectReason};
use crate::ledger::{build_block, AckedTransaction, OutPoint, Transaction, TxKind, TxOut, COINBASE_MATURITY};
use crate::overlay::NodeId;

use super::engine::{Ev, Sim, MAX_SUBMIT_ATTEMPTS, SUBMIT_TIMEOUT_MS};
use super::fault::{FaultMode, FaultStatus};
use super::message::{CommitNotice, EpochStart, Msg, ReportKind, SignedProposal};
use super::node::{Binding, IssueState, Issued, MintRole};
use super::record::*;

impl Sim {
    fn interval(&self) -> i64 {
        self.sc.mint_policy.block_interval_ms
    }

    pub fn mint_host(&self) -> u32 {
        self.registry[&AgentKind::Mint]
    }

    pub fn report(&mut self, n: u32, kind: ReportKind) {
        let to = self.registry[&AgentKind::Recovery];
        let epoch = self.nodes[n as usize].epoch;
        self.send(n, to, Msg::Report { epoch, kind });
    }

    fn fire(&mut self, n: u32, index: usize, height: Option<u64>) {
        self.nodes[n as usize].armed.retain(|(i, _)| *i != index);
        let f = &mut self.faults[index];
        f.status = FaultStatus::Fired;
        f.fired_at_ms = Some(self.now);
        f.height = height;
        let label = f.mode.label();
        self.note(n, "fault-fired", |r| {
            r.detail = Some(label.into());
            r.height = height;
        });
    }

    fn armed(&self, n: u32, pred: impl Fn(&FaultMode) -> bool) -> Option<usize> {
        self.nodes[n as usize].armed.iter().find(|(_, m)| pred(m)).map(|(i, _)| *i)
    }

    // ---- workload ----

    pub(crate) fn on_issue(&mut self, id: u32) {
        if let Some(gap) = self.issue_gap(id) {
            if self.now + gap < self.sc.issue_until() {
                self.at(self.now + gap, Ev::Issue { node: id });
            }
        }
        let w = self.sc.workload.clone();
        let n = self.nodes.len() as u32;
        let rng = &mut self.workload_rngs[id as usize];
        let zero_fee = rng.gen::<f64>() < w.zero_fee_fraction;
        let amount_draw = rng.gen_range(w.amount_min..=w.amount_max.max(w.amount_min));
        let pick_draw: u64 = rng.gen();
        let recipient = (id + 1 + rng.gen_range(0..n.max(2) - 1)) % n;
        if !self.active(id) {
            return;
        }
        let fee = if zero_fee { 0 } else { w.fee };
        let node = &self.nodes[id as usize];
        let height = node.chain.height() + 1;
        let cands: Vec<(OutPoint, u64)> = node
            .chain
            .utxos()
            .owned_by(node.addr())
            .filter(|(op, e)| {
                !node.locked.contains(op)
                    && e.amount > fee
                    && (!e.coinbase || height >= e.created_height + COINBASE_MATURITY)
            })
            .map(|(op, e)| (*op, e.amount))
            .collect();
        if cands.is_empty() {
            self.note(id, "tx-skipped", |r| r.detail = Some("no spendable output".into()));
            return;
        }
        let (op, value) = cands[(pick_draw % cands.len() as u64) as usize];
        let amount = amount_draw.min(value - fee);
        let mut outputs = vec![TxOut {
            address: self.addr(recipient),
            amount,
        }];
        if value - fee - amount > 0 {
            outputs.push(TxOut {
                address: self.addr(id),
                amount: value - fee - amount,
            });
        }
        let mint_addr = self.addr(self.mint_host());
        let node = &mut self.nodes[id as usize];
        node.nonce += 1;
        let tx = Transaction::signed(TxKind::Payment, vec![op], outputs, fee, node.nonce, &node.key);
        node.locked.insert(op);
        node.record(self.now, &mint_addr, Activity::IssueTx { tx: tx.clone() });
        node.issued.insert(
            tx.id,
            Issued {
                tx: tx.clone(),
                attempt: 1,
                state: IssueState::Submitted,
            },
        );
        self.tx_index.insert(tx.id, self.txs.len());
        self.txs.push(TxRecord {
            txid: tx.id,
            issuer: id,
            fee,
            issued_at_ms: self.now,
            attempts: 1,
            acked_at_ms: None,
            ack_timestamp: None,
            round_trip_hops: None,
            status: TxStatus::Submitted,
            included_height: None,
            included_at_ms: None,
            reject_reason: None,
        });
        let txid = tx.id;
        self.note(id, "tx-issued", |r| r.tx = Some(txid));
        self.submit(id, tx, 1);
    }

    fn submit(&mut self, id: u32, tx: Transaction, attempt: u32) {
        let txid = tx.id;
        let mint = self.mint_host();
        self.send(
            id,
            mint,
            Msg::Submit {
                tx,
                issuer: id,
                attempt,
                prior_hops: 0,
            },
        );
        self.at(
            self.now + SUBMIT_TIMEOUT_MS,
            Ev::SubmitTimeout {
                node: id,
                txid,
                attempt,
            },
        );
    }

    fn tx_rec(&mut self, txid: &Digest) -> Option<&mut TxRecord> {
        let i = *self.tx_index.get(txid)?;
        Some(&mut self.txs[i])
    }

    fn resubmit_or_drop(&mut self, id: u32, txid: Digest) {
        let Some(is) = self.nodes[id as usize].issued.get_mut(&txid) else {
            return;
        };
        if is.attempt >= MAX_SUBMIT_ATTEMPTS {
            is.state = IssueState::Dropped;
            let inputs = is.tx.inputs.clone();
            for i in inputs {
                self.nodes[id as usize].locked.remove(&i);
            }
            if let Some(r) = self.tx_rec(&txid) {
                r.status = TxStatus::Dropped;
            }
            self.note(id, "tx-dropped", |r| r.tx = Some(txid));
            return;
        }
        is.attempt += 1;
        is.state = IssueState::Submitted;
        let (tx, attempt) = (is.tx.clone(), is.attempt);
        if let Some(r) = self.tx_rec(&txid) {
            r.attempts = attempt;
        }
        self.submit(id, tx, attempt);
    }

    pub(crate) fn on_submit_timeout(&mut self, id: u32, txid: Digest, attempt: u32) {
        let Some(is) = self.nodes[id as usize].issued.get(&txid) else {
            return;
        };
        if is.state != IssueState::Submitted || is.attempt != attempt || !self.active(id) {
            return;
        }
        if !self.is_sp(id) {
            self.rotate_uplink(id);
        }
        self.resubmit_or_drop(id, txid);
    }

    pub(crate) fn on_inclusion_check(&mut self, id: u32, txid: Digest, attempt: u32) {
        let Some(is) = self.nodes[id as usize].issued.get(&txid) else {
            return;
        };
        if is.state != IssueState::Acked || is.attempt != attempt || !self.active(id) {
            return;
        }
        self.resubmit_or_drop(id, txid);
    }

    // ---- mint: acknowledgments ----

    pub(crate) fn on_submit(&mut self, n: u32, tx: Transaction, issuer: u32, attempt: u32, hops: u32) {
        if self.mint_host() == n {
            let ready = self.nodes[n as usize]
                .mint
                .as_ref()
                .is_some_and(|m| m.epoch == self.registry_epoch);
            if ready {
                self.process_submit(n, tx, issuer, hops);
            } else {
                self.nodes[n as usize].buffered.push((tx, issuer, attempt, hops));
            }
        } else {
            let to = self.mint_host();
            self.send(
                n,
                to,
                Msg::Submit {
                    tx,
                    issuer,
                    attempt,
                    prior_hops: hops,
                },
            );
        }
    }

    fn process_submit(&mut self, n: u32, tx: Transaction, issuer: u32, hops: u32) {
        let now = self.now;
        let issuer_addr = self.addr(issuer);
        let forge = self.armed(n, |m| *m == FaultMode::ForgeAckTimestamp);
        let node = &mut self.nodes[n as usize];
        node.record(
            now,
            &issuer_addr,
            Activity::ReceiveTx {
                tx: tx.clone(),
                arrival_ms: now,
            },
        );
        let role = node.mint.as_mut().expect("caller checked");
        let decision = role.core.decide(&node.chain, &tx, now);
        match decision {
            AckDecision::Accept { ack_timestamp } => {
                let mut ts = ack_timestamp;
                let mut fired = None;
                if let (Some(idx), Some(last)) = (forge, role.last_ack_ts) {
                    ts = last - 1;
                    fired = Some(idx);
                }
                role.last_ack_ts = Some(ts);
                let epoch = role.epoch;
                node.record(
                    now,
                    &issuer_addr,
                    Activity::AcceptTx {
                        txid: tx.id,
                        ack_timestamp: ts,
                    },
                );
                let auth = node.log.authenticator(&node.key).expect("log is non-empty");
                let acked = AckedTransaction {
                    tx,
                    ack_timestamp: ts,
                    mint_authenticator: auth,
                };
                node.mint.as_mut().expect("present").core.admit(acked.clone());
                if let Some(idx) = fired {
                    self.fire(n, idx, None);
                }
                self.broadcast(
                    n,
                    Msg::Acked {
                        acked,
                        issuer,
                        epoch,
                        inbound_hops: hops,
                        direct: false,
                    },
                );
            }
            AckDecision::AlreadyAcked { ack_timestamp } => {
                let epoch = role.epoch;
                let held = role.core.find(&tx.id).cloned();
                node.record(
                    now,
                    &issuer_addr,
                    Activity::AcceptTx {
                        txid: tx.id,
                        ack_timestamp,
                    },
                );
                if let Some(acked) = held {
                    self.send(
                        n,
                        issuer,
                        Msg::Acked {
                            acked,
                            issuer,
                            epoch,
                            inbound_hops: hops,
                            direct: true,
                        },
                    );
                }
            }
            AckDecision::Reject { reason } => {
                node.record(now, &issuer_addr, Activity::RejectTx { txid: tx.id, reason });
                self.send(
                    n,
                    issuer,
                    Msg::Rejected {
                        txid: tx.id,
                        reason,
                        issuer,
                        inbound_hops: hops,
                    },
                );
            }
        }
    }

    pub(crate) fn on_acked(
        &mut self,
        n: u32,
        acked: AckedTransaction,
        issuer: u32,
        epoch: u64,
        hops: u32,
        direct: bool,
    ) {
        let node = &mut self.nodes[n as usize];
        if epoch > node.epoch {
            node.stashed_acks.push((epoch, acked));
            return;
        }
        if epoch < node.epoch {
            return;
        }
        let id = acked.tx.id;
        if !direct {
            let owner = acked.mint_authenticator.log_owner.clone();
            let prev = node.last_ack.get(&owner).cloned();
            match prev {
                Some((ts, earlier)) if acked.ack_timestamp < ts => {
                    self.report(
                        n,
                        ReportKind::AckOrder {
                            earlier: Box::new(earlier),
                            later: Box::new(acked.clone()),
                        },
                    );
                }
                _ => {
                    self.nodes[n as usize]
                        .last_ack
                        .insert(owner, (acked.ack_timestamp, acked.clone()));
                }
            }
        }
        let node = &mut self.nodes[n as usize];
        if !node.committed.contains(&id) {
            node.pool.insert(id, acked.clone());
        }
        if issuer == n {
            self.own_ack(n, acked, hops);
        }
    }

    fn own_ack(&mut self, n: u32, acked: AckedTransaction, hops: u32) {
        let now = self.now;
        let id = acked.tx.id;
        let mint_addr = acked.mint_authenticator.log_owner.clone();
        let node = &mut self.nodes[n as usize];
        let Some(is) = node.issued.get_mut(&id) else {
            return;
        };
        if is.state != IssueState::Submitted {
            return;
        }
        is.state = IssueState::Acked;
        let attempt = is.attempt;
        node.record(
            now,
            &mint_addr,
            Activity::AckTx {
                txid: id,
                accepted: true,
                ack_timestamp: Some(acked.ack_timestamp),
            },
        );
        node.entangle(now, &acked.mint_authenticator);
        if let Some(r) = self.tx_rec(&id) {
            if r.acked_at_ms.is_none() {
                r.acked_at_ms = Some(now);
                r.round_trip_hops = Some(hops);
            }
            r.ack_timestamp = Some(acked.ack_timestamp);
            if r.status == TxStatus::Submitted {
                r.status = TxStatus::Acked;
            }
        }
        self.note(n, "tx-acked", |r| {
            r.tx = Some(id);
            r.hops = Some(hops);
        });
        let wait = 3 * self.interval();
        self.at(now + wait, Ev::InclusionCheck { node: n, txid: id, attempt });
    }

    pub(crate) fn on_rejected(&mut self, n: u32, txid: Digest, reason: RejectReason, issuer: u32) {
        if issuer != n {
            return;
        }
        let now = self.now;
        let mint_addr = self.addr(self.mint_host());
        let node = &mut self.nodes[n as usize];
        let Some(is) = node.issued.get_mut(&txid) else {
            return;
        };
        if is.state != IssueState::Submitted {
            return;
        }
        is.state = IssueState::Rejected;
        let inputs = is.tx.inputs.clone();
        for i in inputs {
            node.locked.remove(&i);
        }
        node.record(
            now,
            &mint_addr,
            Activity::AckTx {
                txid,
                accepted: false,
                ack_timestamp: None,
            },
        );
        if let Some(r) = self.tx_rec(&txid) {
            r.status = TxStatus::Rejected;
            r.reject_reason = Some(reason.label());
        }
        self.note(n, "tx-rejected", |r| {
            r.tx = Some(txid);
            r.detail = Some(reason.label());
        });
    }

    // ---- mint: sealing ----

    pub(crate) fn on_seal(&mut self) {
        let b = self.now;
        self.agent_upkeep();
        self.reward_upkeep(false);
        let m = self.mint_host();
        let ready = self.active(m)
            && self.nodes[m as usize]
                .mint
                .as_ref()
                .is_some_and(|r| r.epoch == self.registry_epoch);
        if !ready {
            self.note(m, "seal-skipped", |_| {});
            return;
        }
        let role = self.nodes[m as usize].mint.as_ref().expect("ready");
        if let Some(p) = role.proposal.clone() {
            let twin = role.twin.clone();
            self.note(m, "proposal-repeat", |r| {
                r.block = Some(p.block.block_hash);
                r.height = Some(p.block.height);
            });
            self.send_proposals(m, p, twin);
            return;
        }
        if let Some(idx) = self.armed(m, |x| *x == FaultMode::OmitAckedTx) {
            let node = &mut self.nodes[m as usize];
            let role = node.mint.as_mut().expect("ready");
            let sel = select_valid_for_seal(role.core.pending(), &node.chain, b, role.core.policy());
            if let Some(first) = sel.first() {
                role.core.drop_pending(&first.tx.id);
                let txid = first.tx.id;
                let h = node.chain.height() + 1;
                self.fire(m, idx, Some(h));
                self.note(m, "tx-omitted", |r| r.tx = Some(txid));
            }
        }
        let node = &mut self.nodes[m as usize];
        let role = node.mint.as_mut().expect("ready");
        let block = match role.core.seal(&node.chain, b) {
            Some(Ok(block)) => block,
            other => {
                let detail = format!("{other:?}");
                self.note(m, "seal-failed", |r| r.detail = Some(detail));
                return;
            }
        };
        let epoch = role.epoch;
        let me = node.addr().clone();
        node.record(
            b,
            &me,
            Activity::NewBlockHash {
                event: BlockEvent::Sealed,
                height: block.height,
                epoch,
                block_hash: block.block_hash,
                timestamp: b,
            },
        );
        let head = node.log.authenticator(&node.key).expect("non-empty");
        let mut twin = None;
        if let Some(idx) = self.armed(m, |x| *x == FaultMode::EquivocateBlock) {
            let node = &self.nodes[m as usize];
            let prev = node.chain.tip().expect("genesis");
            if let Ok(alt) = build_block(&block.txs, prev, b, &self.sc.mint_policy, node.addr()) {
                twin = Some(Rc::new(SignedProposal::sign(alt, epoch, m, head.clone(), &node.key)));
                self.fire(m, idx, Some(block.height));
            }
        }
        let node = &mut self.nodes[m as usize];
        let p = Rc::new(SignedProposal::sign(block.clone(), epoch, m, head, &node.key));
        let role = node.mint.as_mut().expect("ready");
        role.proposal = Some(p.clone());
        role.twin = twin.clone();
        role.votes.clear();
        self.seals.push(SealRecord {
            at_ms: b,
            host: m,
            height: block.height,
            epoch,
            block_hash: block.block_hash,
            tx_count: block.txs.len(),
            twin: twin.as_ref().map(|t| t.block.block_hash),
        });
        self.note(m, "seal", |r| {
            r.block = Some(block.block_hash);
            r.height = Some(block.height);
        });
        self.send_proposals(m, p, twin);
    }

    /// Broadcasts a proposal; an equivocating mint sends its twin to the
    /// second half of the ring and everything attached there.
    fn send_proposals(&mut self, m: u32, p: Rc<SignedProposal>, twin: Option<Rc<SignedProposal>>) {
        let Some(twin) = twin else {
            self.broadcast(m, Msg::Proposal(Box::new((*p).clone())));
            return;
        };
        let ring: Vec<u32> = self.topology.ring().iter().map(|n| n.0).collect();
        let half = ring.len() / 2;
        let a = Rc::new(Msg::Proposal(Box::new((*p).clone())));
        let b = Rc::new(Msg::Proposal(Box::new((*twin).clone())));
        for dst in 0..self.nodes.len() as u32 {
            let anchor = self.uplink_of(dst).unwrap_or(dst);
            let second = dst != m && ring.iter().position(|&s| s == anchor).is_some_and(|i| i >= half);
            let msg = if second { b.clone() } else { a.clone() };
            self.send_rc(m, dst, msg);
        }
    }

    // ---- voting ----

    pub(crate) fn on_proposal(&mut self, n: u32, p: Rc<SignedProposal>) {
        if (p.proposer as usize) >= self.nodes.len() || !p.verify() || address_of(&p.key) != self.addr(p.proposer) {
            return;
        }
        let now = self.now;
        let node = &mut self.nodes[n as usize];
        if p.epoch > node.epoch {
            node.stashed_proposals.push(p);
            return;
        }
        if p.epoch < node.epoch {
            return;
        }
        let hash = p.block.block_hash;
        let h = p.block.height;
        let first = !node.seen_proposals.contains_key(&hash);
        if first {
            node.seen_proposals.insert(hash, p.clone());
            node.entangle(now, &p.mint_head);
        }
        let height = node.chain.height();
        if h <= height {
            return;
        }
        if h > height + 1 {
            if first {
                self.send(n, p.proposer, Msg::SyncRequest { from_height: height });
            }
            return;
        }
        match node.bindings.get(&(h, p.epoch)) {
            Some(Binding::Confirm { hash: bh, vote }) if *bh == hash => {
                let vote = vote.clone();
                self.send_confirm(n, &p, vote);
                return;
            }
            Some(Binding::Abandon) => return,
            // Byzantine nodes confirm every block they are shown.
            Some(Binding::Confirm { .. }) if !node.byzantine => return,
            _ => {}
        }
        if node.byzantine {
            self.cast_vote(n, &p);
            return;
        }
        if !first {
            return;
        }
        let policy = self.sc.mint_policy.clone();
        let node = &mut self.nodes[n as usize];
        // Acks can trail the proposal on another path; adopt any the block
        // carries under a valid mint authenticator before rebuilding.
        for a in &p.block.txs {
            if !node.committed.contains(&a.tx.id) && !node.pool.contains_key(&a.tx.id) && a.mint_authenticator.verify() {
                node.pool.insert(a.tx.id, a.clone());
            }
        }
        let ts = p.block.timestamp;
        let sel = select_valid_for_seal(node.pool.values(), &node.chain, ts, &policy);
        let tip = node.chain.tip().expect("genesis");
        let rebuilt = build_block(&sel, tip, ts, &policy, &self.reward_addr).map(|b| b.block_hash);
        let rb = rebuilt.unwrap_or(Digest::ZERO);
        let proposer_addr = self.nodes[p.proposer as usize].addr().clone();
        let node = &mut self.nodes[n as usize];
        node.record(
            now,
            &proposer_addr,
            Activity::NewBlockHash {
                event: BlockEvent::Rebuilt,
                height: h,
                epoch: p.epoch,
                block_hash: rb,
                timestamp: ts,
            },
        );
        let matched = rb == hash
            && node.chain.check_block(&p.block).is_ok()
            && policy.is_seal_time(ts)
            && ts <= now;
        let super_peer = self.is_sp(n);
        self.rebuilds.push(RebuildRecord {
            node: n,
            super_peer,
            height: h,
            epoch: p.epoch,
            matched,
        });
        if matched {
            self.cast_vote(n, &p);
        } else {
            self.note(n, "rebuild-mismatch", |r| {
                r.block = Some(hash);
                r.height = Some(h);
            });
            self.report(
                n,
                ReportKind::Mismatch {
                    proposal: Box::new((*p).clone()),
                },
            );
        }
    }

    fn cast_vote(&mut self, n: u32, p: &SignedProposal) {
        let (h, e, hash) = (p.block.height, p.epoch, p.block.block_hash);
        let id = confirm_proposal(h, e, &hash);
        let proposer_addr = self.addr(p.proposer);
        let now = self.now;
        let node = &mut self.nodes[n as usize];
        let vote = Vote::cast(&node.key, id, Choice::Yes);
        node.bindings.insert((h, e), Binding::Confirm { hash, vote: vote.clone() });
        node.record(now, &proposer_addr, Activity::Vote { proposal_id: id, yes: true });
        self.send_confirm(n, p, vote);
    }

    fn send_confirm(&mut self, n: u32, p: &SignedProposal, vote: Vote) {
        self.send(
            n,
            p.proposer,
            Msg::Confirm {
                height: p.block.height,
                epoch: p.epoch,
                block_hash: p.block.block_hash,
                vote: Box::new(vote),
            },
        );
    }

    pub(crate) fn on_confirm(&mut self, n: u32, src: u32, h: u64, e: u64, hash: Digest, vote: Vote) {
        let voter_ok = vote.voter == self.addr(src)
            && vote.choice == Choice::Yes
            && vote.proposal_id == confirm_proposal(h, e, &hash)
            && vote.verify();
        let stakes = &self.stakes;
        let node = &mut self.nodes[n as usize];
        let Some(role) = node.mint.as_mut() else {
            return;
        };
        let target = [role.proposal.clone(), role.twin.clone()]
            .into_iter()
            .flatten()
            .find(|p| p.block.block_hash == hash && p.block.height == h && p.epoch == e);
        let Some(p) = target else {
            return;
        };
        if !voter_ok {
            return;
        }
        let votes = role.votes.entry(hash).or_default();
        if votes.iter().any(|v| v.voter == vote.voter) {
            return;
        }
        votes.push(vote);
        if tally_votes(votes, stakes) != TallyOutcome::Yes {
            return;
        }
        let cert = CommitCertificate {
            height: h,
            epoch: e,
            block_hash: hash,
            votes: votes.clone(),
        };
        role.proposal = None;
        role.twin = None;
        role.votes.clear();
        let notice = Rc::new(CommitNotice {
            block: p.block.clone(),
            cert,
            proposer: p.proposer,
        });
        self.certified(n, notice);
    }

    /// A freshly formed certificate: commit locally and announce.
    pub fn certified(&mut self, n: u32, notice: Rc<CommitNotice>) {
        self.checker.on_certificate(&notice, &self.nodes);
        self.note(n, "certified", |r| {
            r.block = Some(notice.block.block_hash);
            r.height = Some(notice.block.height);
        });
        self.on_commit_notice(n, notice.clone(), None, true);
        let msg = Rc::new(Msg::Commit(Box::new((*notice).clone())));
        for dst in 0..self.nodes.len() as u32 {
            if dst != n {
                self.send_rc(n, dst, msg.clone());
            }
        }
    }

    // ---- commits ----

    fn notice_valid(&self, notice: &CommitNotice) -> bool {
        notice.cert.height == notice.block.height
            && notice.cert.block_hash == notice.block.block_hash
            && notice.block.compute_hash() == notice.block.block_hash
            && notice.cert.is_valid(&self.stakes, &mut |v| v.verify())
    }

    pub(crate) fn on_commit_notice(&mut self, n: u32, notice: Rc<CommitNotice>, from: Option<u32>, sync_ok: bool) {
        if !self.notice_valid(&notice) {
            return;
        }
        let h = notice.block.height;
        let e = notice.cert.epoch;
        loop {
            let node = &self.nodes[n as usize];
            let height = node.chain.height();
            if height < h {
                break;
            }
            if node.chain.block_at(h).map(|b| b.block_hash) == Some(notice.block.block_hash) {
                return;
            }
            let tip_epoch = node.tip_epoch();
            let at_h = node.notices[h as usize].as_ref().map_or(0, |x| x.cert.epoch);
            if tip_epoch < e && at_h < e {
                self.revert_tip(n, "superseded");
                continue;
            }
            return;
        }
        let node = &self.nodes[n as usize];
        let height = node.chain.height();
        if h > height + 1 {
            if sync_ok {
                let to = from.unwrap_or_else(|| self.mint_host());
                if to != n {
                    self.send(n, to, Msg::SyncRequest { from_height: height });
                }
            }
            return;
        }
        if notice.block.prev_hash != node.tip_hash() {
            if height > 0 && node.tip_epoch() < e {
                self.revert_tip(n, "superseded");
                if sync_ok {
                    if let Some(to) = from.filter(|&t| t != n) {
                        self.send(n, to, Msg::SyncRequest { from_height: height - 1 });
                    }
                }
            }
            return;
        }
        self.apply_commit(n, notice);
    }

    fn apply_commit(&mut self, n: u32, notice: Rc<CommitNotice>) {
        let now = self.now;
        let block = notice.block.clone();
        let (h, e, hash) = (block.height, notice.cert.epoch, block.block_hash);
        let proposer_addr = self.addr(notice.proposer);
        let node = &mut self.nodes[n as usize];
        if let Err(err) = node.chain.append_block(block.clone()) {
            let detail = err.to_string();
            self.note(n, "commit-rejected", |r| {
                r.block = Some(hash);
                r.height = Some(h);
                r.detail = Some(detail);
            });
            return;
        }
        node.notices.push(Some(notice.clone()));
        for a in &block.txs {
            node.committed.insert(a.tx.id);
        }
        node.prune_pool();
        node.record(
            now,
            &proposer_addr,
            Activity::NewBlockHash {
                event: BlockEvent::Committed,
                height: h,
                epoch: e,
                block_hash: hash,
                timestamp: block.timestamp,
            },
        );
        node.bindings.retain(|(bh, _), _| *bh + 16 > h);
        node.seen_proposals.retain(|_, p| p.block.height > h);
        if let Some(role) = node.mint.as_mut() {
            role.core.on_commit(&block);
            let stale = |p: &Option<Rc<SignedProposal>>| p.as_ref().is_some_and(|p| p.block.height <= h);
            if stale(&role.proposal) || stale(&role.twin) {
                role.proposal = None;
                role.twin = None;
                role.votes.clear();
            }
        }
        let mut mine = Vec::new();
        for a in &block.txs {
            if let Some(is) = node.issued.get_mut(&a.tx.id) {
                is.state = IssueState::Included;
                mine.push(a.tx.id);
            }
        }
        for id in mine {
            if let Some(r) = self.tx_rec(&id) {
                r.status = TxStatus::Included;
                r.included_height = Some(h);
                r.included_at_ms.get_or_insert(now);
            }
        }
        self.block_store.entry(hash).or_insert(block);
        self.commits.push(CommitRecord {
            at_ms: now,
            node: n,
            height: h,
            epoch: e,
            block_hash: hash,
        });
        self.checker.on_commit(n, h, e, hash, now);
        self.note(n, "commit", |r| {
            r.block = Some(hash);
            r.height = Some(h);
        });
        let rot = self.sc.agents.mint_rotation_blocks;
        if rot > 0 && h % rot == 0 && self.mint_host() == n {
            if let Some(next) = self.mint_successor(n) {
                self.migrate_mint(n, next);
            }
        }
    }

    pub(crate) fn revert_tip(&mut self, n: u32, why: &str) {
        let now = self.now;
        let node = &mut self.nodes[n as usize];
        if node.chain.height() == 0 {
            return;
        }
        let block = node.chain.tip().expect("non-empty").clone();
        let e = node.tip_epoch();
        let Ok(released) = node.chain.revert_last_block() else {
            return;
        };
        node.notices.pop();
        for a in &released {
            node.committed.remove(&a.tx.id);
            node.pool.insert(a.tx.id, a.clone());
            if let Some(is) = node.issued.get_mut(&a.tx.id) {
                if is.state == IssueState::Included {
                    is.state = IssueState::Acked;
                }
            }
        }
        let me = node.addr().clone();
        node.record(
            now,
            &me,
            Activity::NewBlockHash {
                event: BlockEvent::Reverted,
                height: block.height,
                epoch: e,
                block_hash: block.block_hash,
                timestamp: block.timestamp,
            },
        );
        if let Some(role) = node.mint.as_mut() {
            role.core.on_revert(released.clone());
        }
        if node.issued.values().any(|_| true) {
            for a in &released {
                if self.nodes[n as usize].issued.contains_key(&a.tx.id) {
                    if let Some(r) = self.tx_rec(&a.tx.id) {
                        r.status = TxStatus::Acked;
                        r.included_height = None;
                        r.included_at_ms = None;
                    }
                }
            }
        }
        self.reverts.push(RevertRecord {
            at_ms: now,
            node: n,
            height: block.height,
            block_hash: block.block_hash,
        });
        let why = why.to_owned();
        self.note(n, "revert", |r| {
            r.block = Some(block.block_hash);
            r.height = Some(block.height);
            r.detail = Some(why);
        });
    }

    pub(crate) fn on_sync_request(&mut self, n: u32, src: u32, from_height: u64) {
        let node = &self.nodes[n as usize];
        let notices: Vec<CommitNotice> = node
            .notices
            .iter()
            .skip(from_height.max(1) as usize)
            .take(200)
            .flatten()
            .map(|x| (**x).clone())
            .collect();
        if !notices.is_empty() {
            self.send(n, src, Msg::SyncReply { notices });
        }
    }

    pub(crate) fn on_stall_check(&mut self, boundary: i64) {
        let mut any = false;
        let mint = self.mint_host();
        for n in 0..self.nodes.len() as u32 {
            if !self.active(n) || n == mint {
                continue;
            }
            let node = &self.nodes[n as usize];
            // A tip from this interval, or an epoch change since the boundary,
            // means the missed block is already accounted for.
            if node.chain.tip().expect("genesis").timestamp >= boundary || node.epoch_at > boundary {
                continue;
            }
            if !node.byzantine {
                any = true;
            }
            let height = node.chain.height();
            if !self.is_sp(n) && node.last_rx < boundary {
                if let Some(old) = node.uplink {
                    self.rotate_uplink(n);
                    self.report(n, ReportKind::SuperPeerSilent { sp: old });
                }
            }
            self.report(n, ReportKind::Stalled { height: height + 1 });
            self.send(n, mint, Msg::SyncRequest { from_height: height });
        }
        if any {
            self.outages += 1;
        }
    }

    // ---- epochs and migration ----

    pub(crate) fn on_epoch_start(&mut self, n: u32, es: &EpochStart) {
        if !es.verify() || (es.signer as usize) >= self.nodes.len() || address_of(&es.key) != self.addr(es.signer) {
            return;
        }
        if es.epoch <= self.nodes[n as usize].epoch {
            return;
        }
        if let Some(h) = es.revert {
            if self.nodes[n as usize].tip_hash() == h {
                self.revert_tip(n, "epoch-start");
            }
        }
        let now = self.now;
        let node = &mut self.nodes[n as usize];
        node.epoch = es.epoch;
        node.epoch_at = now;
        node.pool = es.carried.iter().map(|a| (a.tx.id, a.clone())).collect();
        let stashed = std::mem::take(&mut node.stashed_acks);
        for (e, a) in stashed {
            if e == es.epoch {
                node.pool.insert(a.tx.id, a);
            } else if e > es.epoch {
                node.stashed_acks.push((e, a));
            }
        }
        node.prune_pool();
        if let Some(role) = node.mint.take() {
            let state = handoff(
                &self.agent_states[&AgentKind::Mint],
                &role.core,
                NodeId(es.mint_host),
                &node.key,
            );
            let me = node.addr().clone();
            node.record(
                now,
                &me,
                Activity::AgentHandoff {
                    direction: HandoffDirection::Outgoing,
                    state,
                },
            );
        }
        if es.mint_host == n {
            let mut core = MintCore::new(self.sc.mint_policy.clone(), self.reward_addr.clone());
            for a in node.pool.values() {
                core.admit(a.clone());
            }
            let state = handoff(&self.agent_states[&AgentKind::Mint], &core, NodeId(n), &node.key);
            self.agent_states.insert(AgentKind::Mint, state.clone());
            let me = node.addr().clone();
            node.record(
                now,
                &me,
                Activity::AgentHandoff {
                    direction: HandoffDirection::Incoming,
                    state,
                },
            );
            node.mint = Some(MintRole::new(core, es.epoch));
            self.note(n, "mint-installed", |r| r.detail = Some(format!("epoch {}", es.epoch)));
            self.drain_buffered(n);
        }
        let node = &mut self.nodes[n as usize];
        let props = std::mem::take(&mut node.stashed_proposals);
        let (now_props, later): (Vec<_>, Vec<_>) = props.into_iter().partition(|p| p.epoch == es.epoch);
        node.stashed_proposals = later.into_iter().filter(|p| p.epoch > es.epoch).collect();
        for p in now_props {
            self.on_proposal(n, p);
        }
    }

    fn drain_buffered(&mut self, n: u32) {
        let buffered = std::mem::take(&mut self.nodes[n as usize].buffered);
        for (tx, issuer, _attempt, hops) in buffered {
            self.process_submit(n, tx, issuer, hops);
        }
    }

    /// Next live, trusted super peer after `n` around the ring.
    pub fn mint_successor(&self, n: u32) -> Option<u32> {
        let ring: Vec<u32> = self.topology.ring().iter().map(|x| x.0).collect();
        let start = ring.iter().position(|&x| x == n).map_or(0, |i| i + 1);
        (0..ring.len())
            .map(|i| ring[(start + i) % ring.len()])
            .find(|&x| x != n && self.active(x) && !self.distrusted.contains(&x))
    }

    pub fn migrate_mint(&mut self, from: u32, to: u32) {
        let now = self.now;
        let node = &mut self.nodes[from as usize];
        let Some(role) = node.mint.take_if(|r| r.proposal.is_none()) else {
            return;
        };
        let state = handoff(&self.agent_states[&AgentKind::Mint], &role.core, NodeId(to), &node.key);
        self.agent_states.insert(AgentKind::Mint, state.clone());
        let to_addr = self.nodes[to as usize].addr().clone();
        let node = &mut self.nodes[from as usize];
        node.record(
            now,
            &to_addr,
            Activity::AgentHandoff {
                direction: HandoffDirection::Outgoing,
                state: state.clone(),
            },
        );
        self.registry.insert(AgentKind::Mint, to);
        self.note(from, "mint-handoff", |r| r.peer = Some(to));
        self.send(
            from,
            to,
            Msg::Handoff {
                state: Box::new(state),
                epoch: role.epoch,
            },
        );
    }

    /// Moves a non-mint singleton to `to`, logging both sides.
    pub fn migrate_agent(&mut self, kind: AgentKind, to: u32) {
        let from = self.registry[&kind];
        let prev = self.agent_states[&kind].clone();
        let signer = if self.active(from) { from } else { to };
        let key = self.nodes[signer as usize].key.clone();
        let state = handoff(&prev, &kind.label(), NodeId(to), &key);
        self.agent_states.insert(kind, state.clone());
        self.registry.insert(kind, to);
        if self.active(from) && from != to {
            let to_addr = self.addr(to);
            self.nodes[from as usize].record(
                self.now,
                &to_addr,
                Activity::AgentHandoff {
                    direction: HandoffDirection::Outgoing,
                    state: state.clone(),
                },
            );
            self.send(
                from,
                to,
                Msg::Handoff {
                    state: Box::new(state),
                    epoch: self.registry_epoch,
                },
            );
        } else {
            let me = self.addr(to);
            self.nodes[to as usize].record(
                self.now,
                &me,
                Activity::AgentHandoff {
                    direction: HandoffDirection::Incoming,
                    state,
                },
            );
            self.note(to, "agent-restarted", |r| r.detail = Some(kind.label().into()));
        }
    }

    pub(crate) fn on_handoff(&mut self, n: u32, state: &AgentState, epoch: u64) {
        if accept_handoff(state, None).is_err() || state.host != NodeId(n) {
            self.note(n, "handoff-refused", |r| r.detail = Some(state.kind.label().into()));
            return;
        }
        let me = self.addr(n);
        let now = self.now;
        if state.kind == AgentKind::Mint {
            if self.mint_host() != n || epoch != self.registry_epoch {
                return;
            }
            let Ok(core) = state.decode::<MintCore>() else {
                return;
            };
            let node = &mut self.nodes[n as usize];
            node.record(
                now,
                &me,
                Activity::AgentHandoff {
                    direction: HandoffDirection::Incoming,
                    state: state.clone(),
                },
            );
            node.mint = Some(MintRole::new(core, epoch));
            self.note(n, "mint-installed", |r| r.detail = Some(format!("epoch {epoch}")));
            self.drain_buffered(n);
        } else {
            self.nodes[n as usize].record(
                now,
                &me,
                Activity::AgentHandoff {
                    direction: HandoffDirection::Incoming,
                    state: state.clone(),
                },
            );
        }
    }
}
