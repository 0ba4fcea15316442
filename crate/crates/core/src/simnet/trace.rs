//! Line-delimited trace records and a streaming digest over them.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::crypto::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Send,
    Recv,
    Drop,
    Internal,
}

/// One hop of a routed message: the node reached and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub node: u32,
    pub t: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: i64,
    pub seq: u64,
    pub node: u32,
    pub dir: Direction,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<u32>,
    /// The node's log head when the record was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<Hop>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TraceRecord {
    pub fn new(t: i64, node: u32, dir: Direction, kind: &str) -> Self {
        TraceRecord {
            t,
            seq: 0,
            node,
            dir,
            kind: kind.to_owned(),
            peer: None,
            tx: None,
            block: None,
            height: None,
            hops: None,
            head: None,
            route: None,
            detail: None,
        }
    }
}

/// Numbers records, folds them into a SHA-256 digest and optionally keeps
/// the serialized lines.
pub struct TraceSink {
    hasher: Sha256,
    next_seq: u64,
    lines: Option<Vec<String>>,
}

impl TraceSink {
    pub fn new(keep_lines: bool) -> Self {
        TraceSink {
            hasher: Sha256::new(),
            next_seq: 0,
            lines: keep_lines.then(Vec::new),
        }
    }

    pub fn push(&mut self, mut r: TraceRecord) {
        r.seq = self.next_seq;
        self.next_seq += 1;
        let line = serde_json::to_string(&r).expect("trace record serializes");
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if let Some(l) = self.lines.as_mut() {
            l.push(line);
        }
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    pub fn finish(self) -> (Digest, Option<Vec<String>>) {
        (Digest::from_bytes(self.hasher.finalize().into()), self.lines)
    }
}

/// Digest of a trace file's contents as the sink would compute it.
pub fn digest_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Digest {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    Digest::from_bytes(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_recomputation_over_lines() {
        let mut s = TraceSink::new(true);
        for i in 0..3 {
            s.push(TraceRecord::new(i, 1, Direction::Internal, "tick"));
        }
        let (d, lines) = s.finish();
        let lines = lines.unwrap();
        assert_eq!(d, digest_lines(lines.iter().map(String::as_str)));
        let back: TraceRecord = serde_json::from_str(&lines[2]).unwrap();
        assert_eq!(back.seq, 2);
        assert!(!lines[0].contains("peer"));
    }
}
