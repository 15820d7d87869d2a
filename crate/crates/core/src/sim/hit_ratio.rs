//! Hourly hit-ratio replay of a trace through vote sampling, the mix-free
//! tally and list refresh.

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::QueryTrace;
use crate::list::LookupResult;
use crate::maintenance::{Maintenance, MaintenanceConfig, MaintenanceError, UpdateMessage, Upstream};
use crate::protocol::FRAME_HEADER_LEN;

pub const BROWSER_CACHE_SECS: u64 = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HitRatioConfig {
    pub maintenance: MaintenanceConfig,
    pub fast_start: bool,
    /// Only this many clients (a seeded random subset) ever vote.
    pub voter_cap: Option<usize>,
    /// No votes are cast from this hour on.
    pub stop_votes_after_hours: Option<u64>,
    pub browser_cache: bool,
    pub seed: u64,
}

impl Default for HitRatioConfig {
    fn default() -> Self {
        Self {
            maintenance: MaintenanceConfig::default(),
            fast_start: true,
            voter_cap: None,
            stop_votes_after_hours: None,
            browser_cache: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct HourStats {
    pub hour: u64,
    pub queries: u64,
    pub hits: u64,
    pub votes: u64,
    /// Votes whose buffering query missed the list.
    pub missed_votes: u64,
    pub list_len: usize,
    pub lb_messages: u64,
    pub lb_entries: u64,
    /// Framed bytes of one copy of each message.
    pub lb_bytes: u64,
    pub membership_messages: u64,
    pub membership_bytes: u64,
    pub upstream_queries: u64,
}

impl HourStats {
    fn account(&mut self, m: &UpdateMessage) {
        let framed = (FRAME_HEADER_LEN + 1 + m.body().len()) as u64;
        match m {
            UpdateMessage::LbBatch { updates, .. } => {
                self.lb_messages += 1;
                self.lb_entries += updates.len() as u64;
                self.lb_bytes += framed;
            }
            UpdateMessage::Membership { .. } => {
                self.membership_messages += 1;
                self.membership_bytes += framed;
            }
        }
    }

    pub fn hit_ratio(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.hits as f64 / self.queries as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitRatioSeries {
    pub n_popular: usize,
    pub hours: Vec<HourStats>,
    pub filtered_by_browser_cache: u64,
}

impl HitRatioSeries {
    /// Query-weighted hit ratio over hours `from..to`.
    pub fn mean_hit_ratio(&self, from: u64, to: u64) -> f64 {
        let (q, h) = self.window(from, to).fold((0, 0), |(q, h), s| (q + s.queries, h + s.hits));
        if q == 0 {
            0.0
        } else {
            h as f64 / q as f64
        }
    }

    fn window(&self, from: u64, to: u64) -> impl Iterator<Item = &HourStats> {
        self.hours.iter().filter(move |s| s.hour >= from && s.hour < to)
    }

    /// Fractions over hours `from..to`: (missed queries, votes per query,
    /// share of votes whose query also missed).
    pub fn exposure_inputs(&self, from: u64, to: u64) -> (f64, f64, f64) {
        let mut t = HourStats::default();
        for s in self.window(from, to) {
            t.queries += s.queries;
            t.hits += s.hits;
            t.votes += s.votes;
            t.missed_votes += s.missed_votes;
        }
        let q = t.queries.max(1) as f64;
        let overlap = if t.votes == 0 { 0.0 } else { t.missed_votes as f64 / t.votes as f64 };
        ((t.queries - t.hits) as f64 / q, t.votes as f64 / q, overlap)
    }
}

/// Steps a trace through the list hour by hour: queries are answered from
/// the list of the previous refresh, votes are sampled, capped and tallied,
/// and the list is refreshed at each boundary.
pub struct Replay<'t> {
    trace: &'t QueryTrace,
    config: HitRatioConfig,
    maintenance: Maintenance,
    rng: ChaCha8Rng,
    voters: Option<HashSet<u32>>,
    start: u64,
    hours: u64,
    hour: u64,
    pos: usize,
    memo: Vec<(u64, bool)>,
    last_resolved: HashMap<(u32, u32), u64>,
    filtered: u64,
    requery: bool,
}

impl<'t> Replay<'t> {
    /// `hours` defaults to the span of the trace.
    pub fn new(trace: &'t QueryTrace, config: &HitRatioConfig, hours: Option<u64>) -> Result<Self, MaintenanceError> {
        let maintenance = Maintenance::new(config.maintenance.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let clients = trace.clients();
        let voters = config
            .voter_cap
            .map(|cap| index::sample(&mut rng, clients, cap.min(clients)).into_iter().map(|c| c as u32).collect());
        Ok(Self {
            trace,
            config: config.clone(),
            maintenance,
            rng,
            voters,
            start: trace.start().unwrap_or(0),
            hours: hours.unwrap_or(trace.hours() * 3600 / config.maintenance.t_refresh_secs.max(1)),
            hour: 0,
            pos: 0,
            memo: vec![(u64::MAX, false); trace.keys().len()],
            last_resolved: HashMap::new(),
            filtered: 0,
            requery: false,
        })
    }

    /// Also re-queries expiring records every min-TTL and accounts for the
    /// resulting update messages.
    pub fn with_requery(mut self) -> Self {
        self.requery = true;
        self
    }

    pub fn maintenance(&self) -> &Maintenance {
        &self.maintenance
    }

    pub fn filtered_by_browser_cache(&self) -> u64 {
        self.filtered
    }

    /// Start of period `hour` in trace time.
    pub fn period_start(&self, hour: u64) -> u64 {
        self.start + hour * self.config.maintenance.t_refresh_secs
    }

    pub fn step(&mut self, upstream: &mut dyn Upstream) -> Result<Option<HourStats>, MaintenanceError> {
        if self.hour >= self.hours {
            return Ok(None);
        }
        let hour = self.hour;
        let (begin, end) = (self.period_start(hour), self.period_start(hour + 1));
        let limits = self.config.maintenance.vote_limits(self.maintenance.round() + 1, self.config.fast_start);
        let voting = self.config.stop_votes_after_hours.is_none_or(|h| hour < h);
        let mut stats = HourStats { hour, list_len: self.maintenance.top_keys().len(), ..HourStats::default() };
        let mut buffered: HashSet<(u32, u32)> = HashSet::new();
        let mut candidates: HashMap<u32, Vec<(u32, bool)>> = HashMap::new();
        let events = self.trace.events();
        while self.pos < events.len() && events[self.pos].ts < end {
            let e = events[self.pos];
            self.pos += 1;
            if self.config.browser_cache {
                match self.last_resolved.get(&(e.client, e.key)) {
                    Some(&t) if e.ts < t + BROWSER_CACHE_SECS => {
                        self.filtered += 1;
                        continue;
                    }
                    _ => {
                        self.last_resolved.insert((e.client, e.key), e.ts);
                    }
                }
            }
            let slot = &mut self.memo[e.key as usize];
            if slot.0 != hour {
                let hit = !matches!(self.maintenance.list().lookup(self.trace.key(e.key)), LookupResult::Miss);
                *slot = (hour, hit);
            }
            let hit = slot.1;
            stats.queries += 1;
            stats.hits += u64::from(hit);
            let may_vote = voting && self.voters.as_ref().is_none_or(|v| v.contains(&e.client));
            if may_vote && self.rng.random_bool(limits.voting_rate) && buffered.insert((e.client, e.key)) {
                candidates.entry(e.client).or_default().push((e.key, !hit));
            }
        }
        if self.requery {
            let step = self.config.maintenance.min_ttl_secs;
            let before = self.maintenance.stats();
            let mut t = begin + step;
            while t <= end {
                let now = Duration::from_secs(t);
                self.maintenance.requery_due(now, upstream);
                for m in self.maintenance.flush(now)? {
                    stats.account(&m);
                }
                t += step;
            }
            stats.upstream_queries = self.maintenance.stats().upstream_queries - before.upstream_queries;
        }
        let mut by_client: Vec<(u32, Vec<(u32, bool)>)> = candidates.into_iter().collect();
        by_client.sort_unstable_by_key(|(c, _)| *c);
        for (_, mut votes) in by_client {
            if let Some(cap) = limits.max_votes.map(|c| c as usize).filter(|&c| votes.len() > c) {
                let keep = index::sample(&mut self.rng, votes.len(), cap);
                votes = keep.into_iter().map(|j| votes[j]).collect();
            }
            for (key, missed) in votes {
                self.maintenance.record_vote(self.trace.key(key));
                stats.votes += 1;
                stats.missed_votes += u64::from(missed);
            }
        }
        if self.config.browser_cache {
            self.last_resolved.retain(|_, t| *t + BROWSER_CACHE_SECS > end);
        }
        let before = self.maintenance.stats().upstream_queries;
        for m in self.maintenance.refresh(Duration::from_secs(end), upstream)? {
            stats.account(&m);
        }
        if self.requery {
            stats.upstream_queries += self.maintenance.stats().upstream_queries - before;
        }
        self.hour += 1;
        Ok(Some(stats))
    }
}

/// Replays `trace` and collects the hourly series.
pub fn run_hit_ratio(
    trace: &QueryTrace,
    config: &HitRatioConfig,
    upstream: &mut dyn Upstream,
) -> Result<HitRatioSeries, MaintenanceError> {
    let mut replay = Replay::new(trace, config, None)?;
    let mut hours = Vec::new();
    while let Some(s) = replay.step(upstream)? {
        hours.push(s);
    }
    Ok(HitRatioSeries {
        n_popular: config.maintenance.n_popular,
        hours,
        filtered_by_browser_cache: replay.filtered_by_browser_cache(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generator::{generate, top_key_mass, ZipfGeneratorConfig};
    use crate::sim::universe::{SyntheticUniverse, UniverseConfig};

    fn setup(size: usize, qph: u64, hours: u64) -> (SyntheticUniverse, QueryTrace) {
        let u = SyntheticUniverse::new(UniverseConfig { size, ..UniverseConfig::default() });
        let g = ZipfGeneratorConfig { queries_per_hour: qph, hours, clients: 200, ..ZipfGeneratorConfig::default() };
        let t = generate(&g, &u).unwrap();
        (u, t)
    }

    fn config(n: usize) -> HitRatioConfig {
        HitRatioConfig {
            maintenance: MaintenanceConfig { n_popular: n, ..MaintenanceConfig::default() },
            ..HitRatioConfig::default()
        }
    }

    #[test]
    fn list_covering_the_universe_hits_everything_after_warmup() {
        let (mut u, t) = setup(200, 20_000, 4);
        let s = run_hit_ratio(&t, &config(1000), &mut u).unwrap();
        assert_eq!(s.hours.len(), 4);
        assert_eq!(s.hours[0].hits, 0);
        assert!(s.mean_hit_ratio(2, 4) > 0.999, "{:?}", s.hours);
    }

    #[test]
    fn tiny_list_tracks_the_analytic_head_mass() {
        let (mut u, t) = setup(2000, 40_000, 6);
        let s = run_hit_ratio(&t, &config(20), &mut u).unwrap();
        let expected = top_key_mass(2000, 1.0, 0.0, 20);
        assert!((s.mean_hit_ratio(2, 6) - expected).abs() < 0.02);
    }

    #[test]
    fn stopping_votes_freezes_the_list() {
        let (mut u, t) = setup(500, 5000, 6);
        let cfg = HitRatioConfig { stop_votes_after_hours: Some(2), ..config(50) };
        let s = run_hit_ratio(&t, &cfg, &mut u).unwrap();
        assert!(s.hours[2..].iter().all(|h| h.votes == 0));
        assert!(s.hours[3..].iter().all(|h| h.list_len == s.hours[3].list_len));
        assert!(s.mean_hit_ratio(3, 6) > 0.3);
    }

    #[test]
    fn voter_cap_limits_vote_volume() {
        let (mut u, t) = setup(500, 5000, 3);
        let all = run_hit_ratio(&t, &config(50), &mut u).unwrap();
        let few = run_hit_ratio(&t, &HitRatioConfig { voter_cap: Some(10), ..config(50) }, &mut u).unwrap();
        let v = |s: &HitRatioSeries| s.hours.iter().map(|h| h.votes).sum::<u64>();
        assert!(v(&few) * 5 < v(&all));
        assert!(v(&few) > 0);
    }

    #[test]
    fn browser_cache_filters_repeats_within_a_minute() {
        use crate::dns::{RecordKey, RecordType};
        let mut u = SyntheticUniverse::new(UniverseConfig { size: 10, ..UniverseConfig::default() });
        let mut t = QueryTrace::new();
        let k = t.intern(RecordKey::new(u.name(0).clone(), RecordType::A));
        for ts in [0, 30, 59, 60, 200] {
            t.push(ts, 0, k);
        }
        t.push(30, 1, k);
        t.finish();
        let s = run_hit_ratio(&t, &HitRatioConfig { browser_cache: true, ..config(5) }, &mut u).unwrap();
        assert_eq!(s.filtered_by_browser_cache, 2);
        assert_eq!(s.hours[0].queries, 4);
    }

    #[test]
    fn deterministic_and_zero_list_never_hits() {
        let (mut u, t) = setup(300, 3000, 3);
        let a = run_hit_ratio(&t, &config(30), &mut u).unwrap();
        let b = run_hit_ratio(&t, &config(30), &mut u).unwrap();
        assert_eq!(a, b);
        let cfg = HitRatioConfig { stop_votes_after_hours: Some(0), ..config(30) };
        assert_eq!(run_hit_ratio(&t, &cfg, &mut u).unwrap().mean_hit_ratio(0, 3), 0.0);
    }
}
