//! Primary and secondary audit polls over replica chains and logs.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{Address, Digest};
use crate::ledger::Chain;
use crate::tamper_log::LogExport;

/// Flat byte image of a chain prefix: the canonical bytes of blocks
/// `0..=height` laid end to end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainImage {
    height: u64,
    head: Digest,
    bytes: Vec<u8>,
}

impl ChainImage {
    /// `None` if the chain is shorter than `height`.
    pub fn of(chain: &Chain, height: u64) -> Option<Self> {
        let head = chain.block_at(height)?.block_hash;
        let mut bytes = Vec::new();
        for b in &chain.blocks()[..=height as usize] {
            bytes.extend_from_slice(&b.canonical_bytes());
        }
        Some(ChainImage { height, head, bytes })
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn head(&self) -> Digest {
        self.head
    }

    pub fn len(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn byte(&self, offset: u64) -> Option<u8> {
        self.bytes.get(offset as usize).copied()
    }

    pub fn bytes_mut_for_fault_injection(&mut self) -> &mut Vec<u8> {
        &mut self.bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResponse {
    /// Height of the responder's chain tip.
    pub tip_height: u64,
    /// Responder's block hash at the probed height, if it has one.
    pub head_hash: Option<Digest>,
    /// Bytes at the requested offsets; `None` where the responder has none.
    pub bytes: Vec<Option<u8>>,
    /// The responder's log with its signed head.
    pub log: Option<LogExport>,
}

/// Anything an audit agent can poll.
pub trait ProbeTarget {
    fn address(&self) -> &Address;
    /// `None` if the target does not answer.
    fn respond(&self, at_height: u64, offsets: &[u64]) -> Option<ProbeResponse>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    HeadHashMismatch,
    MissingBytes,
    LogTamper,
    Unresponsive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub node: Address,
    pub kind: FindingKind,
    pub at_height: u64,
    /// Byte offsets for missing bytes, entry index for log tamper.
    pub detail: Vec<u64>,
}

/// `k` distinct offsets in `0..len`, ascending.
pub fn probe_offsets<R: Rng>(rng: &mut R, len: u64, k: usize) -> Vec<u64> {
    let k = k.min(len as usize);
    let mut v: Vec<u64> = index::sample(rng, len as usize, k).into_iter().map(|i| i as u64).collect();
    v.sort_unstable();
    v
}

/// Checks one response against the reference image.
pub fn check_response(
    node: &Address,
    reference: &ChainImage,
    offsets: &[u64],
    response: Option<&ProbeResponse>,
) -> Vec<AuditFinding> {
    let at = reference.height();
    let finding = |kind, detail| AuditFinding {
        node: node.clone(),
        kind,
        at_height: at,
        detail,
    };
    let Some(r) = response else {
        return vec![finding(FindingKind::Unresponsive, vec![])];
    };
    let mut out = Vec::new();
    if let Some(log) = &r.log {
        let report = log.verify();
        let foreign = log.owner != *node || log.head.as_ref().is_some_and(|h| h.log_owner != *node);
        if !report.ok || foreign {
            out.push(finding(FindingKind::LogTamper, vec![report.first_bad_index.unwrap_or(0)]));
        }
    }
    // A replica that has not reached the probed height yet is behind, not faulty.
    if r.tip_height < at {
        return out;
    }
    if r.head_hash != Some(reference.head()) {
        out.push(finding(FindingKind::HeadHashMismatch, vec![]));
        return out;
    }
    let bad: Vec<u64> = offsets
        .iter()
        .zip(r.bytes.iter().map(Some).chain(std::iter::repeat(None)))
        .filter(|(o, got)| got.copied().flatten() != reference.byte(**o))
        .map(|(o, _)| *o)
        .collect();
    if !bad.is_empty() {
        out.push(finding(FindingKind::MissingBytes, bad));
    }
    out
}

/// Polls every target at the reference height with `k` fresh random offsets.
pub fn audit_poll<R: Rng>(
    targets: &[&dyn ProbeTarget],
    rng: &mut R,
    reference: &ChainImage,
    k: usize,
) -> Vec<AuditFinding> {
    let mut out = Vec::new();
    for t in targets {
        let offsets = probe_offsets(rng, reference.len(), k);
        let resp = t.respond(reference.height(), &offsets);
        out.extend(check_response(t.address(), reference, &offsets, resp.as_ref()));
    }
    out
}

/// Secondary audit schedule: a random tenth (rounded up) of the primary's.
pub fn secondary_sample<T: Clone, R: Rng>(primary: &[T], rng: &mut R) -> Vec<T> {
    if primary.is_empty() {
        return Vec::new();
    }
    let n = primary.len().div_ceil(10);
    let mut idx: Vec<usize> = index::sample(rng, primary.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| primary[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_with, KeyPair, Scheme};
    use crate::ledger::{build_block, genesis_block, MintPolicy};
    use crate::tamper_log::{ActivityKind, TamperLog};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(n: u64) -> Chain {
        let k = keygen_with(Scheme::HashDouble, &[3; 32]);
        let reward = Address::from_label("reward");
        let mut c = Chain::from_genesis(genesis_block(&[(&k, 1_000)], 2, &reward, &k));
        for h in 1..=n {
            let b = build_block(&[], c.tip().unwrap(), h as i64 * 600_000, &MintPolicy::default(), &reward).unwrap();
            c.append_block(b).unwrap();
        }
        c
    }

    struct Replica {
        addr: Address,
        key: KeyPair,
        image: ChainImage,
        tip: u64,
        log: TamperLog,
        online: bool,
    }

    impl Replica {
        fn honest(c: &Chain, at: u64, seed: u8) -> Self {
            let key = keygen_with(Scheme::HashDouble, &[seed; 32]);
            let mut log = TamperLog::new(key.address.clone());
            for i in 0..5 {
                log.append(ActivityKind::Vote, crate::crypto::hash(&[i]), Address::from_label("x"), i as i64)
                    .unwrap();
            }
            Replica {
                addr: key.address.clone(),
                key,
                image: ChainImage::of(c, at).unwrap(),
                tip: c.height(),
                log,
                online: true,
            }
        }
    }

    impl ProbeTarget for Replica {
        fn address(&self) -> &Address {
            &self.addr
        }
        fn respond(&self, at_height: u64, offsets: &[u64]) -> Option<ProbeResponse> {
            self.online.then(|| ProbeResponse {
                tip_height: self.tip,
                head_hash: (self.image.height() == at_height).then(|| self.image.head()),
                bytes: offsets.iter().map(|o| self.image.byte(*o)).collect(),
                log: Some(self.log.export(self.log.authenticator(&self.key))),
            })
        }
    }

    #[test]
    fn correct_replicas_yield_no_findings() {
        let c = chain(5);
        let reference = ChainImage::of(&c, 5).unwrap();
        let rs: Vec<Replica> = (0..4).map(|i| Replica::honest(&c, 5, i + 1)).collect();
        let targets: Vec<&dyn ProbeTarget> = rs.iter().map(|r| r as &dyn ProbeTarget).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(audit_poll(&targets, &mut rng, &reference, 32).is_empty());
    }

    #[test]
    fn stale_head_corrupt_byte_tamper_and_silence_are_found() {
        let c = chain(5);
        let reference = ChainImage::of(&c, 5).unwrap();
        let mut stale = Replica::honest(&c, 4, 1);
        stale.tip = 5;
        let mut corrupt = Replica::honest(&c, 5, 2);
        let len = corrupt.image.len();
        for b in corrupt.image.bytes_mut_for_fault_injection().iter_mut() {
            *b ^= 0xff;
        }
        let mut tampered = Replica::honest(&c, 5, 3);
        tampered.log.entries_mut_for_fault_injection()[2].local_timestamp += 1;
        let mut silent = Replica::honest(&c, 5, 4);
        silent.online = false;
        let targets: Vec<&dyn ProbeTarget> = vec![&stale, &corrupt, &tampered, &silent];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = audit_poll(&targets, &mut rng, &reference, 8);
        let kinds: Vec<(Address, FindingKind)> = f.iter().map(|x| (x.node.clone(), x.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (stale.addr.clone(), FindingKind::HeadHashMismatch),
                (corrupt.addr.clone(), FindingKind::MissingBytes),
                (tampered.addr.clone(), FindingKind::LogTamper),
                (silent.addr.clone(), FindingKind::Unresponsive),
            ]
        );
        assert_eq!(f[1].detail.len(), 8);
        assert!(f[1].detail.iter().all(|o| *o < len));
        assert_eq!(f[2].detail, vec![2]);
    }

    #[test]
    fn lagging_replica_is_not_accused() {
        let c = chain(5);
        let reference = ChainImage::of(&c, 5).unwrap();
        let mut behind = Replica::honest(&c, 4, 1);
        behind.tip = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(audit_poll(&[&behind], &mut rng, &reference, 8).is_empty());
    }

    #[test]
    fn single_corrupt_byte_detection_rate_matches_k_over_n() {
        let c = chain(3);
        let reference = ChainImage::of(&c, 3).unwrap();
        let n = reference.len();
        let k = 40usize;
        let mut r = Replica::honest(&c, 3, 1);
        let victim = n / 3;
        r.image.bytes_mut_for_fault_injection()[victim as usize] ^= 1;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|_| {
                audit_poll(&[&r], &mut rng, &reference, k)
                    .iter()
                    .any(|f| f.kind == FindingKind::MissingBytes && f.detail == vec![victim])
            })
            .count();
        let observed = hits as f64 / trials as f64;
        let expected = k as f64 / n as f64;
        assert!(
            ((observed - expected) / expected).abs() <= 0.2,
            "observed {observed} expected {expected}"
        );
    }

    #[test]
    fn secondary_takes_a_tenth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let primary: Vec<u32> = (0..95).collect();
        let s = secondary_sample(&primary, &mut rng);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(secondary_sample::<u32, _>(&[], &mut rng).is_empty());
    }
}
