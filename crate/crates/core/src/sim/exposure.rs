//! Probability that a resolution can be linked to its origin when each
//! relay or mix node colludes independently with probability `c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExposureError {
    #[error("{0} must lie in [0, 1]")]
    OutOfRange(&'static str),
    #[error("overlapping votes exceed the missed queries")]
    Inconsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureModelParams {
    /// Share of queries that miss the list and leave through the fallback.
    pub miss_fraction: f64,
    /// Share of queries cast as votes.
    pub vote_fraction: f64,
    /// Share of votes whose query also missed; counted once.
    pub overlap: f64,
    pub fallback_relays: u32,
    pub mix_hops: u32,
    pub collusion: f64,
}

impl ExposureModelParams {
    pub fn validate(&self) -> Result<(), ExposureError> {
        for (name, v) in [
            ("miss_fraction", self.miss_fraction),
            ("vote_fraction", self.vote_fraction),
            ("overlap", self.overlap),
            ("collusion", self.collusion),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ExposureError::OutOfRange(name));
            }
        }
        // Overlapping votes are a subset of the misses.
        if self.vote_fraction * self.overlap > self.miss_fraction + 1e-12 {
            return Err(ExposureError::Inconsistent);
        }
        Ok(())
    }
}

/// `m·c^kf + v·c^km − v·overlap·c^kf·c^km`: a miss is exposed when all
/// fallback relays collude, a vote when every mix hop does, and a query
/// that is both is counted once.
pub fn exposure_rate(p: &ExposureModelParams) -> Result<f64, ExposureError> {
    p.validate()?;
    let relays = p.collusion.powi(p.fallback_relays as i32);
    let mix = p.collusion.powi(p.mix_hops as i32);
    Ok(p.miss_fraction * relays + p.vote_fraction * mix * (1.0 - p.overlap * relays))
}

/// Overlap that makes full collusion expose exactly `target`, clamped to
/// [0, 1].
pub fn fit_overlap(miss_fraction: f64, vote_fraction: f64, target: f64) -> f64 {
    if vote_fraction <= 0.0 {
        return 0.0;
    }
    ((miss_fraction + vote_fraction - target) / vote_fraction).clamp(0.0, 1.0)
}

/// Exposure at `steps + 1` evenly spaced collusion rates in [0, 1].
pub fn exposure_curve(base: &ExposureModelParams, steps: usize) -> Result<Vec<(f64, f64)>, ExposureError> {
    (0..=steps)
        .map(|i| {
            let c = i as f64 / steps.max(1) as f64;
            exposure_rate(&ExposureModelParams { collusion: c, ..*base }).map(|p| (c, p))
        })
        .collect()
}
