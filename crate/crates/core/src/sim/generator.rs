//! Synthetic Zipf query traces over a [`SyntheticUniverse`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::QueryTrace;
use super::universe::SyntheticUniverse;
use crate::dns::RecordType;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("invalid generator parameter: {0}")]
    Invalid(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZipfGeneratorConfig {
    pub exponent: f64,
    pub clients: u32,
    pub queries_per_hour: u64,
    pub hours: u64,
    /// Fraction of popularity ranks permuted at each day boundary.
    pub churn_per_day: f64,
    /// Share of queries asking for AAAA instead of A.
    pub aaaa_share: f64,
    pub start_ts: u64,
    pub seed: u64,
}

impl Default for ZipfGeneratorConfig {
    fn default() -> Self {
        Self {
            exponent: 1.0,
            clients: 4000,
            queries_per_hour: 50_000,
            hours: 24,
            churn_per_day: 0.0,
            aaaa_share: 0.0,
            start_ts: 1_700_000_000,
            seed: 0,
        }
    }
}

impl ZipfGeneratorConfig {
    pub fn validate(&self, universe: usize) -> Result<(), GeneratorError> {
        if self.exponent.is_nan() || self.exponent <= 0.0 {
            return Err(GeneratorError::Invalid("exponent must be positive"));
        }
        if universe == 0 || self.clients == 0 {
            return Err(GeneratorError::Invalid("universe and clients must be nonempty"));
        }
        if !(0.0..=1.0).contains(&self.churn_per_day) || !(0.0..=1.0).contains(&self.aaaa_share) {
            return Err(GeneratorError::Invalid("shares must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Probability of popularity rank `r` (0-based) under Zipf(s) over `n` ranks.
pub fn zipf_pmf(n: usize, s: f64) -> Vec<f64> {
    let weights: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-s)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Query mass covered by the `top` most popular (name, type) keys.
pub fn top_key_mass(n: usize, s: f64, aaaa_share: f64, top: usize) -> f64 {
    let mut mass: Vec<f64> = zipf_pmf(n, s)
        .into_iter()
        .flat_map(|p| [p * (1.0 - aaaa_share), p * aaaa_share])
        .filter(|&p| p > 0.0)
        .collect();
    mass.sort_by(|a, b| b.total_cmp(a));
    mass.iter().take(top).sum()
}

/// Generates a trace: every hour has exactly `queries_per_hour` events at
/// uniform times, uniform clients and Zipf-distributed ranks.
pub fn generate(config: &ZipfGeneratorConfig, universe: &SyntheticUniverse) -> Result<QueryTrace, GeneratorError> {
    config.validate(universe.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zipf = Zipf::new(universe.len() as f64, config.exponent).map_err(|_| GeneratorError::Invalid("zipf"))?;
    // rank_to_record[r] is the record currently at popularity rank r.
    let mut rank_to_record: Vec<u32> = (0..universe.len() as u32).collect();
    let mut trace = QueryTrace::new();
    let mut ids: Vec<[Option<u32>; 2]> = vec![[None; 2]; universe.len()];
    let mut times = Vec::with_capacity(config.queries_per_hour as usize);
    for hour in 0..config.hours {
        if hour > 0 && hour % 24 == 0 {
            churn(&mut rank_to_record, config.churn_per_day, &mut rng);
        }
        let base = config.start_ts + hour * 3600;
        times.clear();
        times.extend((0..config.queries_per_hour).map(|_| base + rng.random_range(0..3600)));
        times.sort_unstable();
        for &ts in &times {
            let rank = zipf.sample(&mut rng) as usize - 1;
            let record = rank_to_record[rank.min(universe.len() - 1)] as usize;
            let v6 = rng.random_bool(config.aaaa_share);
            let slot = &mut ids[record][usize::from(v6)];
            let key = match *slot {
                Some(k) => k,
                None => {
                    let rtype = if v6 { RecordType::AAAA } else { RecordType::A };
                    let k = trace.intern(universe.key(record, rtype));
                    *slot = Some(k);
                    k
                }
            };
            let client = rng.random_range(0..config.clients);
            trace.push(ts, client, key);
        }
    }
    trace.finish();
    Ok(trace)
}

/// Permutes the records held by a random `fraction` of ranks.
fn churn<R: Rng>(ranks: &mut [u32], fraction: f64, rng: &mut R) {
    let count = ((ranks.len() as f64) * fraction).round() as usize;
    if count < 2 {
        return;
    }
    let positions = rand::seq::index::sample(rng, ranks.len(), count).into_vec();
    let mut held: Vec<u32> = positions.iter().map(|&p| ranks[p]).collect();
    held.shuffle(rng);
    for (&p, r) in positions.iter().zip(held) {
        ranks[p] = r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::universe::UniverseConfig;

    fn universe(n: usize) -> SyntheticUniverse {
        SyntheticUniverse::new(UniverseConfig { size: n, ..UniverseConfig::default() })
    }

    #[test]
    fn harmonic_mass_oracle() {
        // Independent route: partial harmonic sums H_k = sum 1/i.
        let h = |k: usize| (1..=k).map(|i| 1.0 / i as f64).sum::<f64>();
        for top in [1, 10, 100, 1000] {
            let expected = h(top) / h(10_000);
            assert!((top_key_mass(10_000, 1.0, 0.0, top) - expected).abs() < 1e-12);
        }
        assert!((top_key_mass(100, 1.0, 0.5, 200) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_frequencies_follow_the_pmf() {
        let u = universe(1000);
        let cfg =
            ZipfGeneratorConfig { queries_per_hour: 100_000, hours: 1, clients: 10, ..ZipfGeneratorConfig::default() };
        let t = generate(&cfg, &u).unwrap();
        assert_eq!(t.len(), 100_000);
        let top = t.events().iter().filter(|e| t.key(e.key).name == *u.name(0)).count() as f64;
        let p = zipf_pmf(1000, 1.0)[0];
        let sigma = (100_000.0 * p * (1.0 - p)).sqrt();
        assert!((top - 100_000.0 * p).abs() < 4.0 * sigma, "{top}");
        assert!(t.events().windows(2).all(|w| w[0].ts <= w[1].ts));
    }

    #[test]
    fn deterministic_given_seed() {
        let u = universe(500);
        let cfg = ZipfGeneratorConfig {
            queries_per_hour: 2000,
            hours: 30,
            churn_per_day: 0.2,
            ..ZipfGeneratorConfig::default()
        };
        assert_eq!(generate(&cfg, &u).unwrap(), generate(&cfg, &u).unwrap());
        let other = ZipfGeneratorConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg, &u).unwrap(), generate(&other, &u).unwrap());
    }

    #[test]
    fn churn_is_a_permutation() {
        let mut ranks: Vec<u32> = (0..1000).collect();
        churn(&mut ranks, 0.1, &mut ChaCha8Rng::seed_from_u64(1));
        let moved = ranks.iter().enumerate().filter(|(i, &r)| *i as u32 != r).count();
        assert!(moved > 50 && moved <= 100);
        ranks.sort_unstable();
        assert_eq!(ranks, (0..1000).collect::<Vec<u32>>());
    }
}
