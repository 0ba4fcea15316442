//! Stake-weighted voting, replay-based attestation, dispute resolution and
//! banning.
//!
//! Decisions use a strict majority of total offered stake: exactly half is
//! never enough, either for quorum or for a yes outcome.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::CanonicalWriter;
use crate::crypto::{self, hash, Address, Digest, KeyPair, PublicKey, Signature};
use crate::journal::Activity;
use crate::overlay::{NodeId, OverlayError, Topology};
use crate::tamper_log::{verify_log, Authenticator, EntanglementReceipt, LogEntry};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeTable {
    entries: BTreeMap<Address, u64>,
    total: u64,
}

impl StakeTable {
    pub fn new(entries: BTreeMap<Address, u64>) -> Self {
        let total = entries.values().sum();
        Self { entries, total }
    }

    pub fn stake_of(&self, a: &Address) -> u64 {
        self.entries.get(a).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn entries(&self) -> &BTreeMap<Address, u64> {
        &self.entries
    }

    /// Highest stake, ties to the lowest address.
    pub fn largest(&self) -> Option<&Address> {
        self.entries
            .iter()
            .filter(|(_, &s)| s > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(a, _)| a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Choice {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub voter: Address,
    pub voter_key: PublicKey,
    pub proposal_id: Digest,
    pub choice: Choice,
    pub signature: Signature,
}

impl Vote {
    pub fn signing_bytes(proposal_id: &Digest, choice: Choice) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("vote");
        w.digest(proposal_id).bool(choice == Choice::Yes);
        w.finish()
    }

    pub fn cast(key: &KeyPair, proposal_id: Digest, choice: Choice) -> Self {
        Vote {
            voter: key.address.clone(),
            voter_key: key.public_key.clone(),
            proposal_id,
            choice,
            signature: crypto::sign(key, &Self::signing_bytes(&proposal_id, choice)),
        }
    }

    pub fn verify(&self) -> bool {
        crypto::address_of(&self.voter_key) == self.voter
            && crypto::verify(
                &self.voter_key,
                &Self::signing_bytes(&self.proposal_id, self.choice),
                &self.signature,
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TallyOutcome {
    Yes,
    No,
    NoQuorum,
}

/// Stake-weighted tally. Only the first vote from each address counts;
/// signatures are assumed checked by the caller.
pub fn tally_votes(votes: &[Vote], stakes: &StakeTable) -> TallyOutcome {
    let mut seen = BTreeSet::new();
    let (mut yes, mut no) = (0u128, 0u128);
    for v in votes {
        if !seen.insert(&v.voter) {
            continue;
        }
        let s = stakes.stake_of(&v.voter) as u128;
        match v.choice {
            Choice::Yes => yes += s,
            Choice::No => no += s,
        }
    }
    let total = stakes.total() as u128;
    if 2 * yes > total {
        TallyOutcome::Yes
    } else if 2 * (yes + no) <= total {
        TallyOutcome::NoQuorum
    } else if 2 * no >= total {
        TallyOutcome::No
    } else {
        // Quorum reached but neither side decisive.
        TallyOutcome::NoQuorum
    }
}

/// Proposal a confirm vote binds: one block hash at one height and epoch.
pub fn confirm_proposal(height: u64, epoch: u64, block_hash: &Digest) -> Digest {
    let mut w = CanonicalWriter::with_tag("confirm");
    w.u64(height).u64(epoch).digest(block_hash);
    hash(&w.finish())
}

/// Confirm votes from holders of more than half the stake for one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitCertificate {
    pub height: u64,
    pub epoch: u64,
    pub block_hash: Digest,
    pub votes: Vec<Vote>,
}

impl CommitCertificate {
    /// Checks every vote with `check` (a signature verifier, possibly
    /// memoized) and requires a yes tally on the bound proposal.
    pub fn is_valid(&self, stakes: &StakeTable, check: &mut dyn FnMut(&Vote) -> bool) -> bool {
        let proposal = confirm_proposal(self.height, self.epoch, &self.block_hash);
        self.votes
            .iter()
            .all(|v| v.proposal_id == proposal && v.choice == Choice::Yes && check(v))
            && tally_votes(&self.votes, stakes) == TallyOutcome::Yes
    }
}

/// Per-activity outcome of stepping a reference implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepResult {
    /// Consumed as input or irrelevant to the reference.
    Input,
    /// An output the reference reproduces.
    Match,
    /// An output the reference would not have produced.
    Mismatch,
}

/// Deterministic node function re-executed over logged inputs.
pub trait ReferenceBehavior {
    fn step(&mut self, activity: &Activity) -> StepResult;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "result")]
pub enum ReplayOutcome {
    Matches,
    Diverges { index: u64 },
}

/// Replays `inputs` (one activity per log entry) through `reference`.
/// An activity whose digest disagrees with its log entry, or an output the
/// reference does not reproduce, is a divergence at that entry.
pub fn replay_attest(
    accused_log: &[LogEntry],
    logged_inputs: &[Activity],
    reference: &mut dyn ReferenceBehavior,
) -> ReplayOutcome {
    for (i, (entry, act)) in accused_log.iter().zip(logged_inputs).enumerate() {
        if entry.activity_kind != act.kind() || entry.payload_digest != act.payload_digest() {
            return ReplayOutcome::Diverges { index: i as u64 };
        }
        if reference.step(act) == StepResult::Mismatch {
            return ReplayOutcome::Diverges { index: i as u64 };
        }
    }
    if accused_log.len() != logged_inputs.len() {
        return ReplayOutcome::Diverges {
            index: accused_log.len().min(logged_inputs.len()) as u64,
        };
    }
    ReplayOutcome::Matches
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictOutcome {
    Upheld,
    Rejected,
    MisbehaviorProven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceKind {
    LogTamper,
    ReceiptContradiction,
    ReplayDivergence,
    Equivocation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub log: Address,
    pub entry_index: u64,
    pub kind: EvidenceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub proposal_id: Digest,
    pub outcome: VerdictOutcome,
    pub against: Option<Address>,
    pub evidence: Option<Evidence>,
}

impl Verdict {
    pub fn proven(proposal_id: Digest, evidence: Evidence) -> Self {
        Verdict {
            proposal_id,
            outcome: VerdictOutcome::MisbehaviorProven,
            against: Some(evidence.log.clone()),
            evidence: Some(evidence),
        }
    }
}

/// One side of a dispute: its log, signed head and the activities behind it.
pub struct PartyRecord<'a> {
    pub owner: Address,
    pub entries: &'a [LogEntry],
    pub head: &'a Authenticator,
    pub inputs: &'a [Activity],
    pub reference: Option<&'a mut dyn ReferenceBehavior>,
}

pub struct Dispute<'a> {
    pub proposal_id: Digest,
    pub claimant: PartyRecord<'a>,
    pub accused: PartyRecord<'a>,
    /// Receipts either party holds against the other's log.
    pub receipts: &'a [EntanglementReceipt],
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DisputeError {
    #[error("no replay divergence and no stake quorum")]
    Unresolvable,
}

/// Evidence against one party, if any: log tampering first, then a signed
/// head the party issued that its own log contradicts, then replay.
pub fn find_misbehavior(party: &mut PartyRecord<'_>, receipts: &[EntanglementReceipt]) -> Option<Evidence> {
    let report = verify_log(party.entries, party.head);
    if !report.ok {
        return Some(Evidence {
            log: party.owner.clone(),
            entry_index: report.first_bad_index.unwrap_or(0),
            kind: EvidenceKind::LogTamper,
        });
    }
    for r in receipts {
        let a = &r.remote_authenticator;
        if a.log_owner != party.owner || !a.verify() {
            continue;
        }
        let matches = party
            .entries
            .get(a.head_index as usize)
            .is_some_and(|e| e.authenticator == a.head_digest);
        if !matches {
            return Some(Evidence {
                log: party.owner.clone(),
                entry_index: a.head_index,
                kind: EvidenceKind::ReceiptContradiction,
            });
        }
    }
    if let Some(reference) = party.reference.as_mut() {
        if let ReplayOutcome::Diverges { index } = replay_attest(party.entries, party.inputs, &mut **reference) {
            return Some(Evidence {
                log: party.owner.clone(),
                entry_index: index,
                kind: EvidenceKind::ReplayDivergence,
            });
        }
    }
    None
}

/// Attestation first; only when neither side is provably at fault does the
/// stake-weighted vote decide.
pub fn resolve_dispute(
    mut dispute: Dispute<'_>,
    votes: &[Vote],
    stakes: &StakeTable,
) -> Result<Verdict, DisputeError> {
    let id = dispute.proposal_id;
    if let Some(ev) = find_misbehavior(&mut dispute.accused, dispute.receipts) {
        return Ok(Verdict::proven(id, ev));
    }
    if let Some(ev) = find_misbehavior(&mut dispute.claimant, dispute.receipts) {
        return Ok(Verdict::proven(id, ev));
    }
    let outcome = match tally_votes(votes, stakes) {
        TallyOutcome::Yes => VerdictOutcome::Upheld,
        TallyOutcome::No => VerdictOutcome::Rejected,
        TallyOutcome::NoQuorum => return Err(DisputeError::Unresolvable),
    };
    Ok(Verdict {
        proposal_id: id,
        outcome,
        against: None,
        evidence: None,
    })
}

/// Proposal id of a ban vote against `node`.
pub fn ban_proposal(node: &Address) -> Digest {
    let mut w = CanonicalWriter::with_tag("ban");
    w.str(node.as_str());
    hash(&w.finish())
}

pub enum BanAuthority<'a> {
    Verdict(&'a Verdict),
    Tally(TallyOutcome),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BanError {
    #[error("ban requires proven misbehavior or a yes tally")]
    NotAuthorized,
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanOutcome {
    pub topology: Topology,
    pub replaced_by: Option<NodeId>,
    pub rehomed: Vec<NodeId>,
}

/// Removes `node` from the topology. A banned super peer is replaced by the
/// first of `ranked_candidates` (best fitness first) that is a full node.
#[allow(clippy::too_many_arguments)]
pub fn ban_node<R: Rng>(
    topology: &Topology,
    node: NodeId,
    node_address: &Address,
    authority: BanAuthority<'_>,
    ranked_candidates: &[NodeId],
    latency: &dyn Fn(NodeId, NodeId) -> u64,
    rng: &mut R,
) -> Result<BanOutcome, BanError> {
    let ok = match authority {
        BanAuthority::Verdict(v) => {
            v.outcome == VerdictOutcome::MisbehaviorProven && v.against.as_ref() == Some(node_address)
        }
        BanAuthority::Tally(t) => t == TallyOutcome::Yes,
    };
    if !ok {
        return Err(BanError::NotAuthorized);
    }
    let mut t = topology.clone();
    if t.is_super_peer(node) {
        let replacement = ranked_candidates
            .iter()
            .copied()
            .find(|c| *c != node && !t.is_super_peer(*c) && t.plan_of(*c).is_some());
        let rehomed = match replacement {
            Some(new) => t.replace_super_peer(node, new, latency, rng)?,
            None => t.remove_super_peer(node, latency, rng)?,
        };
        Ok(BanOutcome {
            topology: t,
            replaced_by: replacement,
            rehomed,
        })
    } else {
        t.remove_full_node(node);
        Ok(BanOutcome {
            topology: t,
            replaced_by: None,
            rehomed: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_with, Scheme};
    use crate::tamper_log::{ActivityKind, TamperLog};

    fn key(n: u8) -> KeyPair {
        keygen_with(Scheme::HashDouble, &[n; 32])
    }

    fn table(stakes: &[u64]) -> (Vec<KeyPair>, StakeTable) {
        let ks: Vec<KeyPair> = (0..stakes.len()).map(|i| key(i as u8 + 1)).collect();
        let t = StakeTable::new(ks.iter().zip(stakes).map(|(k, &s)| (k.address.clone(), s)).collect());
        (ks, t)
    }

    #[test]
    fn single_majority_holder_decides_yes() {
        let (ks, t) = table(&[60, 30, 10]);
        let p = Digest::ZERO;
        assert_eq!(tally_votes(&[Vote::cast(&ks[0], p, Choice::Yes)], &t), TallyOutcome::Yes);
    }

    #[test]
    fn exactly_half_responding_is_no_quorum() {
        let (ks, t) = table(&[50, 30, 20]);
        let p = Digest::ZERO;
        assert_eq!(tally_votes(&[Vote::cast(&ks[0], p, Choice::No)], &t), TallyOutcome::NoQuorum);
        assert_eq!(tally_votes(&[Vote::cast(&ks[0], p, Choice::Yes)], &t), TallyOutcome::NoQuorum);
    }

    #[test]
    fn minority_yes_majority_no() {
        let (ks, t) = table(&[49, 51]);
        let p = Digest::ZERO;
        let v = [Vote::cast(&ks[0], p, Choice::Yes), Vote::cast(&ks[1], p, Choice::No)];
        assert_eq!(tally_votes(&v, &t), TallyOutcome::No);
    }

    #[test]
    fn duplicate_votes_count_once_first_wins() {
        let (ks, t) = table(&[40, 35, 25]);
        let p = Digest::ZERO;
        let v = [
            Vote::cast(&ks[0], p, Choice::No),
            Vote::cast(&ks[0], p, Choice::Yes),
            Vote::cast(&ks[1], p, Choice::Yes),
        ];
        assert_eq!(tally_votes(&v, &t), TallyOutcome::NoQuorum);
    }

    #[test]
    fn vote_signature_covers_choice() {
        let k = key(1);
        let mut v = Vote::cast(&k, Digest::ZERO, Choice::Yes);
        assert!(v.verify());
        v.choice = Choice::No;
        assert!(!v.verify());
    }

    struct Never;
    impl ReferenceBehavior for Never {
        fn step(&mut self, a: &Activity) -> StepResult {
            if matches!(a, Activity::Vote { yes: false, .. }) {
                StepResult::Mismatch
            } else {
                StepResult::Input
            }
        }
    }

    fn log_with(k: &KeyPair, acts: &[Activity]) -> TamperLog {
        let mut log = TamperLog::new(k.address.clone());
        for (i, a) in acts.iter().enumerate() {
            log.append(a.kind(), a.payload_digest(), Address::from_label("p"), i as i64).unwrap();
        }
        log
    }

    #[test]
    fn replay_flags_first_unreproduced_output() {
        let k = key(1);
        let acts = vec![
            Activity::Vote { proposal_id: Digest::ZERO, yes: true },
            Activity::Vote { proposal_id: Digest::ZERO, yes: false },
        ];
        let log = log_with(&k, &acts);
        assert_eq!(replay_attest(log.entries(), &acts, &mut Never), ReplayOutcome::Diverges { index: 1 });
        assert_eq!(replay_attest(&log.entries()[..1], &acts[..1], &mut Never), ReplayOutcome::Matches);
        // An input that does not hash to its entry is itself a divergence.
        let mut swapped = acts.clone();
        swapped[0] = Activity::Vote { proposal_id: hash(b"x"), yes: true };
        assert_eq!(replay_attest(log.entries(), &swapped, &mut Never), ReplayOutcome::Diverges { index: 0 });
    }

    #[test]
    fn receipt_contradicting_truncated_log_proves_misbehavior() {
        let (issuer, mint) = (key(1), key(2));
        let acts = vec![Activity::Vote { proposal_id: Digest::ZERO, yes: true }; 4];
        let mint_log = log_with(&mint, &acts);
        let mut issuer_log = log_with(&issuer, &acts[..1]);
        let receipt = issuer_log.entangle(&mint_log.authenticator(&mint).unwrap(), 10).unwrap();
        // The mint later presents a shorter log with a freshly signed head.
        let short = &mint_log.entries()[..2];
        let short_head = Authenticator::issue(&mint, 1, short[1].authenticator);
        let issuer_head = issuer_log.authenticator(&issuer).unwrap();
        let issuer_acts: Vec<Activity> = acts[..1]
            .iter()
            .cloned()
            .chain([Activity::Entangle { remote: receipt.remote_authenticator.clone() }])
            .collect();
        let dispute = Dispute {
            proposal_id: hash(b"ack-claim"),
            claimant: PartyRecord {
                owner: issuer.address.clone(),
                entries: issuer_log.entries(),
                head: &issuer_head,
                inputs: &issuer_acts,
                reference: None,
            },
            accused: PartyRecord {
                owner: mint.address.clone(),
                entries: short,
                head: &short_head,
                inputs: &acts[..2],
                reference: None,
            },
            receipts: std::slice::from_ref(&receipt),
        };
        let (_, stakes) = table(&[1]);
        let v = resolve_dispute(dispute, &[], &stakes).unwrap();
        assert_eq!(v.outcome, VerdictOutcome::MisbehaviorProven);
        assert_eq!(v.against, Some(mint.address.clone()));
        let ev = v.evidence.unwrap();
        assert_eq!(ev.kind, EvidenceKind::ReceiptContradiction);
        assert_eq!(ev.entry_index, 3);
        assert_eq!(issuer_log.entries()[1].activity_kind, ActivityKind::Entangle);
    }

    fn consistent_dispute<'a>(
        a: &'a (KeyPair, TamperLog, Authenticator, Vec<Activity>),
        b: &'a (KeyPair, TamperLog, Authenticator, Vec<Activity>),
    ) -> Dispute<'a> {
        let rec = |p: &'a (KeyPair, TamperLog, Authenticator, Vec<Activity>)| PartyRecord {
            owner: p.0.address.clone(),
            entries: p.1.entries(),
            head: &p.2,
            inputs: &p.3,
            reference: None,
        };
        Dispute {
            proposal_id: hash(b"lost"),
            claimant: rec(a),
            accused: rec(b),
            receipts: &[],
        }
    }

    fn party(n: u8) -> (KeyPair, TamperLog, Authenticator, Vec<Activity>) {
        let k = key(n);
        let acts = vec![Activity::Vote { proposal_id: Digest::ZERO, yes: true }];
        let log = log_with(&k, &acts);
        let head = log.authenticator(&k).unwrap();
        (k, log, head, acts)
    }

    #[test]
    fn consistent_logs_fall_back_to_votes() {
        let (a, b) = (party(1), party(2));
        let (ks, stakes) = table(&[60, 40]);
        let p = hash(b"lost");
        let v = resolve_dispute(consistent_dispute(&a, &b), &[Vote::cast(&ks[0], p, Choice::Yes)], &stakes).unwrap();
        assert_eq!(v.outcome, VerdictOutcome::Upheld);
        assert!(v.evidence.is_none());
    }

    #[test]
    fn silent_majority_is_unresolvable() {
        let (a, b) = (party(1), party(2));
        let (ks, stakes) = table(&[40, 60]);
        let p = hash(b"lost");
        let r = resolve_dispute(consistent_dispute(&a, &b), &[Vote::cast(&ks[0], p, Choice::Yes)], &stakes);
        assert_eq!(r, Err(DisputeError::Unresolvable));
    }

    #[test]
    fn certificate_requires_majority_of_valid_confirms() {
        let (ks, stakes) = table(&[30, 30, 40]);
        let h = hash(b"block");
        let p = confirm_proposal(5, 0, &h);
        let mut cert = CommitCertificate {
            height: 5,
            epoch: 0,
            block_hash: h,
            votes: vec![Vote::cast(&ks[0], p, Choice::Yes), Vote::cast(&ks[1], p, Choice::Yes)],
        };
        assert!(cert.is_valid(&stakes, &mut |v| v.verify()));
        cert.votes.pop();
        assert!(!cert.is_valid(&stakes, &mut |v| v.verify()));
        cert.votes.push(Vote::cast(&ks[2], confirm_proposal(5, 0, &hash(b"other")), Choice::Yes));
        assert!(!cert.is_valid(&stakes, &mut |v| v.verify()));
    }

    fn small_overlay() -> Topology {
        use crate::overlay::{build_topology, FitnessMetrics, FitnessWeights, OverlayConfig};
        use rand::SeedableRng;
        let fit: BTreeMap<NodeId, FitnessMetrics> = (0..30u32)
            .map(|i| {
                (
                    NodeId(i),
                    FitnessMetrics {
                        uptime_fraction: 1.0 - i as f64 / 100.0,
                        bandwidth_in: 10.0,
                        bandwidth_out: 10.0,
                        latency_ms: 20.0,
                        redundancy_degree: 3.0,
                        cpu_score: 0.5,
                        chain_present: true,
                    },
                )
            })
            .collect();
        let cfg = OverlayConfig {
            super_peer_count: 5,
            max_connection_fraction: 1.0,
            ..OverlayConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        build_topology(&fit, &FitnessWeights::default(), &cfg, &|_, _| 20, &mut rng).unwrap().0
    }

    #[test]
    fn ban_needs_authority() {
        use rand::SeedableRng;
        let t = small_overlay();
        let who = Address::from_label("n7");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = ban_node(&t, NodeId(7), &who, BanAuthority::Tally(TallyOutcome::NoQuorum), &[], &|_, _| 20, &mut rng);
        assert_eq!(r.unwrap_err(), BanError::NotAuthorized);
        let other = Verdict::proven(
            Digest::ZERO,
            Evidence {
                log: Address::from_label("someone-else"),
                entry_index: 0,
                kind: EvidenceKind::LogTamper,
            },
        );
        let r = ban_node(&t, NodeId(7), &who, BanAuthority::Verdict(&other), &[], &|_, _| 20, &mut rng);
        assert_eq!(r.unwrap_err(), BanError::NotAuthorized);
    }

    #[test]
    fn banned_full_node_leaves_and_banned_super_peer_is_replaced() {
        use rand::SeedableRng;
        let t = small_overlay();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let yes = || BanAuthority::Tally(TallyOutcome::Yes);
        let out = ban_node(&t, NodeId(20), &Address::from_label("n20"), yes(), &[], &|_, _| 20, &mut rng).unwrap();
        assert!(out.topology.plan_of(NodeId(20)).is_none());
        out.topology.check_invariants().unwrap();

        let sp = *t.super_peers().iter().next().unwrap();
        let out = ban_node(&t, sp, &Address::from_label("sp"), yes(), &[sp, NodeId(12), NodeId(13)], &|_, _| 20, &mut rng)
            .unwrap();
        assert_eq!(out.replaced_by, Some(NodeId(12)));
        assert!(!out.topology.is_super_peer(sp));
        assert!(out.topology.is_super_peer(NodeId(12)));
        assert!(out.topology.connections().values().all(|p| !p.contains(sp)));
        out.topology.check_invariants().unwrap();
    }
}
