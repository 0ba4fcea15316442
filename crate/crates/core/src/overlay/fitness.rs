use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitnessMetrics {
    pub uptime_fraction: f64,
    pub bandwidth_in: f64,
    pub bandwidth_out: f64,
    pub latency_ms: f64,
    pub redundancy_degree: f64,
    pub cpu_score: f64,
    pub chain_present: bool,
}

impl FitnessMetrics {
    pub fn is_well_formed(&self) -> bool {
        let nums = [
            self.uptime_fraction,
            self.bandwidth_in,
            self.bandwidth_out,
            self.latency_ms,
            self.redundancy_degree,
            self.cpu_score,
        ];
        nums.iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.uptime_fraction <= 1.0
            && self.cpu_score <= 1.0
            && self.latency_ms > 0.0
    }
}

/// Weights for uptime, bandwidth in, bandwidth out, latency, redundancy,
/// cpu, chain presence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights(pub [f64; 7]);

impl Default for FitnessWeights {
    fn default() -> Self {
        FitnessWeights([1.0 / 7.0; 7])
    }
}

impl FitnessWeights {
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|w| w.is_finite() && *w >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

/// Population reference values used to map raw metrics into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub max_bandwidth_in: f64,
    pub max_bandwidth_out: f64,
    pub min_latency_ms: f64,
    pub max_redundancy: f64,
}

impl Normalization {
    pub fn from_population<'a, I>(metrics: I) -> Self
    where
        I: IntoIterator<Item = &'a FitnessMetrics>,
    {
        let mut n = Normalization {
            max_bandwidth_in: 0.0,
            max_bandwidth_out: 0.0,
            min_latency_ms: f64::INFINITY,
            max_redundancy: 0.0,
        };
        for m in metrics {
            n.max_bandwidth_in = n.max_bandwidth_in.max(m.bandwidth_in);
            n.max_bandwidth_out = n.max_bandwidth_out.max(m.bandwidth_out);
            n.min_latency_ms = n.min_latency_ms.min(m.latency_ms);
            n.max_redundancy = n.max_redundancy.max(m.redundancy_degree);
        }
        n
    }
}

fn ratio(v: f64, max: f64) -> f64 {
    if max > 0.0 {
        (v / max).min(1.0)
    } else {
        0.0
    }
}

/// Weighted sum of normalized components. Latency contributes
/// `min_latency / latency`; chain presence contributes 0 or 1.
pub fn score_fitness(m: &FitnessMetrics, w: &FitnessWeights, norm: &Normalization) -> f64 {
    let latency = if m.latency_ms > 0.0 && norm.min_latency_ms.is_finite() {
        (norm.min_latency_ms / m.latency_ms).min(1.0)
    } else {
        0.0
    };
    let parts = [
        m.uptime_fraction,
        ratio(m.bandwidth_in, norm.max_bandwidth_in),
        ratio(m.bandwidth_out, norm.max_bandwidth_out),
        latency,
        ratio(m.redundancy_degree, norm.max_redundancy),
        m.cpu_score,
        if m.chain_present { 1.0 } else { 0.0 },
    ];
    parts.iter().zip(w.0.iter()).map(|(p, w)| p * w).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn best() -> FitnessMetrics {
        FitnessMetrics {
            uptime_fraction: 1.0,
            bandwidth_in: 100.0,
            bandwidth_out: 50.0,
            latency_ms: 10.0,
            redundancy_degree: 8.0,
            cpu_score: 1.0,
            chain_present: true,
        }
    }

    #[test]
    fn all_max_metrics_score_one() {
        let m = best();
        let norm = Normalization::from_population([&m]);
        let s = score_fitness(&m, &FitnessWeights::default(), &norm);
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn hand_computed_half_point() {
        // Each ratio component at one half, binary components at 1 and 0.
        let top = best();
        let m = FitnessMetrics {
            uptime_fraction: 0.5,
            bandwidth_in: 50.0,
            bandwidth_out: 25.0,
            latency_ms: 20.0,
            redundancy_degree: 4.0,
            cpu_score: 0.5,
            chain_present: false,
        };
        let norm = Normalization::from_population([&top, &m]);
        let s = score_fitness(&m, &FitnessWeights::default(), &norm);
        assert!((s - 3.0 / 7.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn identical_metrics_identical_scores() {
        let norm = Normalization::from_population([&best()]);
        let w = FitnessWeights::default();
        assert_eq!(score_fitness(&best(), &w, &norm), score_fitness(&best(), &w, &norm));
    }

    #[test]
    fn default_weights_are_valid() {
        assert!(FitnessWeights::default().is_valid());
        assert!(!FitnessWeights([0.5; 7]).is_valid());
    }
}
