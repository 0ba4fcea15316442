//! Latency model and overlay routing.
//!
//! A message between two nodes travels full node -> its uplink super peer ->
//! the destination's uplink -> destination, skipping legs that collapse. A
//! full-node access leg counts `1 + outer_rings` hops. Each hop costs the
//! base latency plus uniform jitter. Delivery is FIFO per (source,
//! destination) pair.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::crypto::hash_parts;

use super::scenario::LatencyConfig;
use super::trace::Hop;

pub struct Net {
    cfg: LatencyConfig,
    outer_rings: u32,
    rng: ChaCha8Rng,
    last_delivery: BTreeMap<(u32, u32), i64>,
}

/// A scheduled delivery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routed {
    pub deliver_at: i64,
    pub hops: u32,
    /// Nodes after the source with their arrival times.
    pub route: Vec<Hop>,
}

impl Net {
    pub fn new(cfg: LatencyConfig, outer_rings: u32, rng: ChaCha8Rng) -> Self {
        Net {
            cfg,
            outer_rings,
            rng,
            last_delivery: BTreeMap::new(),
        }
    }

    fn hop_latency(&mut self) -> i64 {
        let j = if self.cfg.jitter_max_ms == 0 {
            0
        } else {
            self.rng.gen_range(0..=self.cfg.jitter_max_ms)
        };
        (self.cfg.base_ms + j) as i64
    }

    /// Node sequence from `src` to `dst`. `uplink` is `None` for super peers.
    pub fn path(src: u32, dst: u32, uplink: &dyn Fn(u32) -> Option<u32>) -> Vec<u32> {
        let mut p = vec![src];
        if src == dst {
            return p;
        }
        for n in [uplink(src), uplink(dst), Some(dst)].into_iter().flatten() {
            if *p.last().expect("non-empty") != n {
                p.push(n);
            }
        }
        p
    }

    /// Schedules delivery along `path` sent at `now`.
    pub fn schedule(&mut self, now: i64, path: &[u32], is_full_node: &dyn Fn(u32) -> bool) -> Routed {
        let mut t = now;
        let mut hops = 0;
        let mut route = Vec::with_capacity(path.len().saturating_sub(1));
        for w in path.windows(2) {
            let legs = if is_full_node(w[0]) || is_full_node(w[1]) {
                1 + self.outer_rings
            } else {
                1
            };
            for _ in 0..legs {
                t += self.hop_latency();
            }
            hops += legs;
            route.push(Hop { node: w[1], t });
        }
        let (src, dst) = (path[0], *path.last().expect("non-empty path"));
        let key = (src, dst);
        let last = self.last_delivery.get(&key).copied().unwrap_or(i64::MIN);
        let deliver_at = t.max(last);
        if let Some(h) = route.last_mut() {
            h.t = deliver_at;
        }
        self.last_delivery.insert(key, deliver_at);
        Routed {
            deliver_at,
            hops,
            route,
        }
    }
}

/// Static pairwise latency used for overlay decisions: the base plus a
/// deterministic offset in `0..=jitter_max`.
pub fn pair_latency(cfg: &LatencyConfig, seed: u64, a: u32, b: u32) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let d = hash_parts(&[b"cpos-pair", &seed.to_be_bytes(), &lo.to_be_bytes(), &hi.to_be_bytes()]);
    cfg.base_ms + d.prefix_u64() % (cfg.jitter_max_ms + 1)
}
