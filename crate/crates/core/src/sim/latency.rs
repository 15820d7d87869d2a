//! Lookup latency composed from the hit ratio and per-mode fallback costs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::resolver::FallbackMode;

/// Milliseconds. Fallback costs are per lookup and include the transport.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyTable {
    pub local_hit_ms: f64,
    /// Local lookup that misses, paid before the fallback starts.
    pub local_miss_ms: f64,
    pub fallback_ms: BTreeMap<FallbackMode, f64>,
}

impl Default for LatencyTable {
    fn default() -> Self {
        let fallback_ms = [
            (FallbackMode::Plain, 25.0),
            (FallbackMode::Doh, 45.0),
            (FallbackMode::DnscryptRotating, 60.0),
            (FallbackMode::AnonDnscryptRotating, 180.0),
            (FallbackMode::Dohot, 1100.0),
            (FallbackMode::Simulated, 50.0),
        ]
        .into_iter()
        .collect();
        Self { local_hit_ms: 0.5, local_miss_ms: 1.0, fallback_ms }
    }
}

impl LatencyTable {
    pub fn fallback(&self, mode: FallbackMode) -> f64 {
        self.fallback_ms.get(&mode).copied().unwrap_or(0.0)
    }

    /// Expected latency at `hit_ratio`.
    pub fn mean(&self, hit_ratio: f64, mode: FallbackMode) -> f64 {
        hit_ratio * self.local_hit_ms + (1.0 - hit_ratio) * (self.local_miss_ms + self.fallback(mode))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatencyPoint {
    pub hour: u64,
    pub hit_ratio: f64,
    pub mean_ms: f64,
    pub sampled_ms: f64,
}

/// Per hour: the closed-form mean and the mean of `samples` lookups drawn
/// as hits with probability equal to that hour's hit ratio.
pub fn run_latency(
    hit_ratios: &[f64],
    table: &LatencyTable,
    mode: FallbackMode,
    samples: usize,
    seed: u64,
) -> Vec<LatencyPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let miss = table.local_miss_ms + table.fallback(mode);
    hit_ratios
        .iter()
        .enumerate()
        .map(|(hour, &h)| {
            let h = h.clamp(0.0, 1.0);
            let total: f64 = (0..samples).map(|_| if rng.random_bool(h) { table.local_hit_ms } else { miss }).sum();
            LatencyPoint {
                hour: hour as u64,
                hit_ratio: h,
                mean_ms: table.mean(h, mode),
                sampled_ms: if samples == 0 { 0.0 } else { total / samples as f64 },
            }
        })
        .collect()
}
