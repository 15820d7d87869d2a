//! Server-side list upkeep: vote scoring, hourly refresh, TTL re-queries and
//! the update messages that keep client lists in sync.

mod batcher;
mod schedule;
mod score;
mod upstream;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns::{RecordAnswer, RecordKey, RecordType};
use crate::list::{
    encode_lb_batch, encode_membership, LbUpdate, ListError, ListRecord, MembershipUpdate, PopularityList,
    RecordContent, MAX_CNAME_DEPTH, MAX_POOL_GROUP,
};

pub use batcher::LbBatcher;
pub use schedule::TtlSchedule;
pub use score::{update_score, PopularityScore, ScoreBoard};
pub use upstream::{AuthorityEntry, MemoryAuthority, Resolution, Upstream, UpstreamError};

const BACKOFF_BASE: Duration = Duration::from_secs(2);
const BACKOFF_CAP: Duration = Duration::from_secs(300);
const RECOMPUTE_PASSES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaintenanceConfig {
    pub n_popular: usize,
    pub t_refresh_secs: u64,
    pub weight_a: f64,
    pub voting_rate: f64,
    pub max_votes_per_round: u32,
    pub min_ttl_secs: u64,
    pub fast_start_rounds: u64,
    /// Distinct answer sets within the window that mark a record as
    /// actively load-balanced.
    pub lb_distinct_sets: usize,
    pub lb_window_secs: u64,
    /// Tracked scores are capped at this multiple of `n_popular`.
    pub score_cap_factor: usize,
    pub seed: u64,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        Self {
            n_popular: 25_000,
            t_refresh_secs: 3600,
            weight_a: 0.1,
            voting_rate: 0.3,
            max_votes_per_round: 10,
            min_ttl_secs: 60,
            fast_start_rounds: 18,
            lb_distinct_sets: 3,
            lb_window_secs: 600,
            score_cap_factor: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{name} = {value} outside {range}")]
    OutOfRange { name: &'static str, value: f64, range: &'static str },
}

/// Per-round voting limits seen by clients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoteLimits {
    pub voting_rate: f64,
    /// `None` means unlimited.
    pub max_votes: Option<u32>,
}

impl MaintenanceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n_popular", self.n_popular as u64),
            ("t_refresh", self.t_refresh_secs),
            ("max_votes_per_round", u64::from(self.max_votes_per_round)),
            ("min_ttl", self.min_ttl_secs),
            ("lb_distinct_sets", self.lb_distinct_sets as u64),
            ("lb_window", self.lb_window_secs),
            ("score_cap_factor", self.score_cap_factor as u64),
        ] {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !(self.weight_a > 0.0 && self.weight_a <= 1.0) {
            return Err(ConfigError::OutOfRange { name: "weight_a", value: self.weight_a, range: "(0, 1]" });
        }
        if !(self.voting_rate > 0.0 && self.voting_rate <= 1.0) {
            return Err(ConfigError::OutOfRange { name: "voting_rate", value: self.voting_rate, range: "(0, 1]" });
        }
        Ok(())
    }

    /// Limits for round `round` (1-based). Fast start lifts both limits.
    pub fn vote_limits(&self, round: u64, fast_start: bool) -> VoteLimits {
        if fast_start && round <= self.fast_start_rounds {
            VoteLimits { voting_rate: 1.0, max_votes: None }
        } else {
            VoteLimits { voting_rate: self.voting_rate, max_votes: Some(self.max_votes_per_round) }
        }
    }

    pub fn min_ttl(&self) -> Duration {
        Duration::from_secs(self.min_ttl_secs)
    }
}

#[derive(Debug, Error)]
pub enum MaintenanceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("published list rejected an update: {0}")]
    List(#[from] ListError),
}

/// An encoded incremental change, ready to frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UpdateMessage {
    Membership { update: MembershipUpdate, body: Vec<u8> },
    LbBatch { updates: Vec<LbUpdate>, body: Vec<u8> },
}

impl UpdateMessage {
    pub fn body(&self) -> &[u8] {
        match self {
            Self::Membership { body, .. } | Self::LbBatch { body, .. } => body,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MaintenanceStats {
    pub rounds: u64,
    pub upstream_queries: u64,
    pub upstream_failures: u64,
    pub requeries: u64,
    pub lb_promotions: u64,
    pub membership_messages: u64,
    pub lb_messages: u64,
    pub lb_entries_sent: u64,
}

#[derive(Clone, Debug)]
struct StoredRecord {
    content: RecordContent,
    /// Answer sets seen inside the LB window.
    history: VecDeque<(Duration, Vec<RecordAnswer>)>,
    failures: u32,
}

/// Owns scores, the authoritative record store, the re-query schedule and
/// the list as published to clients.
pub struct Maintenance {
    config: MaintenanceConfig,
    scores: ScoreBoard,
    round: u64,
    top: BTreeSet<RecordKey>,
    known: HashMap<RecordKey, StoredRecord>,
    listed: BTreeSet<RecordKey>,
    published: PopularityList,
    schedule: TtlSchedule,
    batcher: LbBatcher,
    dirty: BTreeSet<RecordKey>,
    structural: bool,
    last_flush: Option<Duration>,
    rng: ChaCha8Rng,
    stats: MaintenanceStats,
}

fn sorted_set(mut answers: Vec<RecordAnswer>) -> Vec<RecordAnswer> {
    answers.sort();
    answers.dedup();
    answers
}

/// Same record, ignoring which pooled answer is selected.
fn same_ignoring_lb_index(a: &ListRecord, b: &ListRecord) -> bool {
    match (&a.content, &b.content) {
        (RecordContent::LoadBalanced { answers: x, .. }, RecordContent::LoadBalanced { answers: y, .. }) => x == y,
        _ => a == b,
    }
}

impl Maintenance {
    pub fn new(config: MaintenanceConfig) -> Result<Self, MaintenanceError> {
        config.validate()?;
        Ok(Self {
            scores: ScoreBoard::new(config.weight_a),
            round: 0,
            top: BTreeSet::new(),
            known: HashMap::new(),
            listed: BTreeSet::new(),
            published: PopularityList::new(),
            schedule: TtlSchedule::new(),
            batcher: LbBatcher::new(config.min_ttl()),
            dirty: BTreeSet::new(),
            structural: false,
            last_flush: None,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            stats: MaintenanceStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &MaintenanceConfig {
        &self.config
    }

    /// Number of completed voting rounds.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// The list exactly as clients hold it after applying every emitted
    /// message.
    pub fn list(&self) -> &PopularityList {
        &self.published
    }

    pub fn top_keys(&self) -> &BTreeSet<RecordKey> {
        &self.top
    }

    pub fn scores(&self) -> &ScoreBoard {
        &self.scores
    }

    pub fn stats(&self) -> MaintenanceStats {
        self.stats
    }

    pub fn schedule(&self) -> &TtlSchedule {
        &self.schedule
    }

    pub fn next_requery(&mut self) -> Option<Duration> {
        self.schedule.next_due()
    }

    /// Counts a tallied vote toward the round in progress.
    pub fn record_vote(&mut self, key: &RecordKey) {
        self.scores.record_vote(key, self.round + 1);
    }

    /// The authoritative record set, from which the published list must be
    /// rebuildable.
    pub fn authoritative_records(&self) -> Vec<ListRecord> {
        self.listed.iter().map(|k| ListRecord { key: k.clone(), content: self.known[k].content.clone() }).collect()
    }

    /// Closes the round in progress: re-ranks, resolves newcomers and emits
    /// the membership change.
    pub fn refresh(
        &mut self,
        now: Duration,
        upstream: &mut dyn Upstream,
    ) -> Result<Vec<UpdateMessage>, MaintenanceError> {
        self.round += 1;
        self.stats.rounds += 1;
        let eligible = |k: &RecordKey| k.rtype == RecordType::A || k.rtype == RecordType::AAAA;
        let new_top = self.scores.top_n(self.config.n_popular, self.round, &self.top, eligible);
        let cap = self.config.n_popular.saturating_mul(self.config.score_cap_factor);
        self.scores.evict(cap, self.round, &new_top);
        self.top = new_top;
        self.recompute(now, upstream);
        Ok(self.emit_membership()?.into_iter().collect())
    }

    /// Re-queries every record whose TTL expired by `now`.
    pub fn requery_due(&mut self, now: Duration, upstream: &mut dyn Upstream) -> usize {
        let due = self.schedule.pop_due(now);
        let count = due.len();
        for key in due {
            if self.known.contains_key(&key) {
                self.requery(&key, now, upstream);
            }
        }
        if self.structural {
            self.recompute(now, upstream);
        }
        count
    }

    /// Publishes re-query changes: at most one round of messages per
    /// min-TTL interval.
    pub fn flush(&mut self, now: Duration) -> Result<Vec<UpdateMessage>, MaintenanceError> {
        if self.last_flush.is_some_and(|t| now < t + self.config.min_ttl()) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        if let Some(m) = self.emit_membership()? {
            out.push(m);
        }
        if let Some(updates) = self.batcher.flush(now, &self.published) {
            for u in &updates {
                self.published.apply_lb_update(u.entry as usize, i64::from(u.offset))?;
            }
            self.stats.lb_messages += 1;
            self.stats.lb_entries_sent += updates.len() as u64;
            let body = encode_lb_batch(&updates);
            out.push(UpdateMessage::LbBatch { updates, body });
        }
        if !out.is_empty() {
            self.last_flush = Some(now);
        }
        Ok(out)
    }

    fn backoff(failures: u32) -> Duration {
        let exp = failures.saturating_sub(1).min(16);
        (BACKOFF_BASE * (1u32 << exp)).min(BACKOFF_CAP)
    }

    fn reschedule(&mut self, key: &RecordKey, now: Duration, ttl: u32) {
        let wait = Duration::from_secs(u64::from(ttl)).max(self.config.min_ttl());
        self.schedule.schedule(key.clone(), now + wait);
    }

    fn forget(&mut self, key: &RecordKey) {
        self.known.remove(key);
        self.schedule.remove(key);
        self.batcher.discard(key);
        self.dirty.insert(key.clone());
        self.structural = true;
    }

    fn requery(&mut self, key: &RecordKey, now: Duration, upstream: &mut dyn Upstream) {
        self.stats.requeries += 1;
        self.stats.upstream_queries += 1;
        let result = upstream.resolve(key, now);
        let res = match result {
            Ok(res) => res,
            Err(UpstreamError::Failure(_)) => {
                self.stats.upstream_failures += 1;
                let rec = self.known.get_mut(key).expect("known");
                rec.failures += 1;
                let wait = Self::backoff(rec.failures);
                self.schedule.schedule(key.clone(), now + wait);
                return;
            }
            Err(_) => {
                self.forget(key);
                return;
            }
        };
        self.known.get_mut(key).expect("known").failures = 0;
        let own_cname =
            res.records.iter().find(|(rr, _)| rr.name == key.name && rr.answer.rtype() == RecordType::CNAME);
        if key.rtype == RecordType::CNAME {
            match own_cname {
                Some((rr, ttl)) => {
                    let ttl = *ttl;
                    let RecordAnswer::Cname(target) = &rr.answer else { unreachable!() };
                    let rec = self.known.get_mut(key).expect("known");
                    if rec.content != RecordContent::Cname(target.clone()) {
                        rec.content = RecordContent::Cname(target.clone());
                        self.dirty.insert(key.clone());
                        self.structural = true;
                    }
                    self.reschedule(key, now, ttl);
                }
                None => self.forget(key),
            }
            return;
        }
        if own_cname.is_some() {
            // The name turned into an alias.
            self.forget(key);
            self.absorb(&res, now);
            return;
        }
        let terminal: Vec<&(crate::dns::ResourceRecord, u32)> =
            res.records.iter().filter(|(rr, _)| rr.name == key.name && rr.answer.rtype() == key.rtype).collect();
        if terminal.is_empty() {
            self.forget(key);
            return;
        }
        let ttl = terminal.iter().map(|(_, t)| *t).min().expect("non-empty");
        let answers = sorted_set(terminal.iter().map(|(rr, _)| rr.answer.clone()).collect());
        self.merge_answers(key, answers, now);
        self.reschedule(key, now, ttl);
    }

    /// Folds a fresh answer set into a stored address record.
    fn merge_answers(&mut self, key: &RecordKey, fresh: Vec<RecordAnswer>, now: Duration) {
        let window = Duration::from_secs(self.config.lb_window_secs);
        let k_sets = self.config.lb_distinct_sets;
        let rec = self.known.get_mut(key).expect("known");
        rec.history.push_back((now, fresh.clone()));
        while rec.history.front().is_some_and(|(t, _)| *t + window < now) {
            rec.history.pop_front();
        }
        match &mut rec.content {
            RecordContent::Inline(current) => {
                if fresh.contains(current) {
                    return;
                }
                let distinct: HashSet<&Vec<RecordAnswer>> = rec.history.iter().map(|(_, s)| s).collect();
                let pick = fresh.choose(&mut self.rng).expect("non-empty").clone();
                if distinct.len() >= k_sets {
                    let mut pool = sorted_set(rec.history.iter().flat_map(|(_, s)| s.iter().cloned()).collect());
                    if pool.len() > MAX_POOL_GROUP {
                        pool = fresh.clone();
                    }
                    let current = pool.binary_search(&pick).expect("picked from pool") as u8;
                    rec.content = RecordContent::LoadBalanced { answers: pool, current };
                    self.stats.lb_promotions += 1;
                } else {
                    rec.content = RecordContent::Inline(pick);
                }
                self.dirty.insert(key.clone());
            }
            RecordContent::LoadBalanced { answers, current } => {
                let selected = answers[usize::from(*current)].clone();
                let extends = fresh.iter().any(|a| answers.binary_search(a).is_err());
                if extends {
                    let mut pool = sorted_set(answers.iter().chain(&fresh).cloned().collect());
                    if pool.len() > MAX_POOL_GROUP {
                        pool = fresh.clone();
                    }
                    let keep = if fresh.contains(&selected) {
                        selected
                    } else {
                        fresh.choose(&mut self.rng).expect("non-empty").clone()
                    };
                    *current = pool.binary_search(&keep).expect("kept answer pooled") as u8;
                    *answers = pool;
                    self.dirty.insert(key.clone());
                } else if !fresh.contains(&selected) {
                    let pick = fresh.choose(&mut self.rng).expect("non-empty");
                    let next = answers.binary_search(pick).expect("subset of pool") as u8;
                    let delta = i64::from(next) - i64::from(*current);
                    *current = next;
                    self.batcher.queue(key.clone(), delta);
                }
            }
            RecordContent::Cname(_) => unreachable!("address re-query on an alias"),
        }
    }

    /// Adds the records of a resolution that are not yet known. A name that
    /// switched between alias and address form drops its older records.
    fn absorb(&mut self, res: &Resolution, now: Duration) {
        let mut groups: BTreeMap<RecordKey, (Vec<RecordAnswer>, u32)> = BTreeMap::new();
        for (rr, ttl) in &res.records {
            let key = RecordKey::new(rr.name.clone(), rr.answer.rtype());
            let entry = groups.entry(key).or_insert_with(|| (Vec::new(), u32::MAX));
            entry.0.push(rr.answer.clone());
            entry.1 = entry.1.min(*ttl);
        }
        for (key, (answers, ttl)) in groups {
            if self.known.contains_key(&key) {
                continue;
            }
            let conflicting: Vec<RecordKey> = [RecordType::A, RecordType::AAAA, RecordType::CNAME]
                .into_iter()
                .filter(|&t| (t == RecordType::CNAME) != (key.rtype == RecordType::CNAME))
                .map(|t| RecordKey::new(key.name.clone(), t))
                .filter(|k| self.known.contains_key(k))
                .collect();
            for k in conflicting {
                self.forget(&k);
            }
            let answers = sorted_set(answers);
            let content = match &answers[0] {
                RecordAnswer::Cname(t) => RecordContent::Cname(t.clone()),
                _ => RecordContent::Inline(answers.choose(&mut self.rng).expect("non-empty").clone()),
            };
            self.known
                .insert(key.clone(), StoredRecord { content, history: VecDeque::from([(now, answers)]), failures: 0 });
            self.reschedule(&key, now, ttl);
        }
    }

    /// Follows stored records from a top key to its terminal record.
    fn follow(&self, key: &RecordKey) -> Result<Vec<RecordKey>, bool> {
        let mut out = Vec::new();
        let mut name = key.name.clone();
        let mut seen = HashSet::new();
        for _ in 0..=MAX_CNAME_DEPTH {
            let direct = RecordKey::new(name.clone(), key.rtype);
            if self.known.contains_key(&direct) {
                out.push(direct);
                return Ok(out);
            }
            let alias = RecordKey::new(name, RecordType::CNAME);
            match self.known.get(&alias).map(|r| &r.content) {
                Some(RecordContent::Cname(target)) => {
                    if !seen.insert(target.clone()) {
                        return Err(false);
                    }
                    out.push(alias);
                    name = target.clone();
                }
                _ => return Err(true),
            }
        }
        Err(false)
    }

    /// Recomputes the listed record set from the top keys, resolving missing
    /// links upstream, and drops records nothing depends on.
    fn recompute(&mut self, now: Duration, upstream: &mut dyn Upstream) {
        let mut attempted = HashSet::new();
        let mut listed = BTreeSet::new();
        for pass in 0..RECOMPUTE_PASSES {
            listed.clear();
            let mut missing = Vec::new();
            for key in &self.top {
                match self.follow(key) {
                    Ok(chain) => listed.extend(chain),
                    Err(true) => missing.push(key.clone()),
                    Err(false) => {}
                }
            }
            if missing.is_empty() || pass + 1 == RECOMPUTE_PASSES {
                break;
            }
            for key in missing {
                if !attempted.insert(key.clone()) {
                    continue;
                }
                self.stats.upstream_queries += 1;
                match upstream.resolve(&key, now) {
                    Ok(res) => self.absorb(&res, now),
                    Err(_) => self.stats.upstream_failures += 1,
                }
            }
        }
        let stale: Vec<RecordKey> = self.known.keys().filter(|k| !listed.contains(*k)).cloned().collect();
        for key in stale {
            self.known.remove(&key);
            self.schedule.remove(&key);
            self.batcher.discard(&key);
        }
        self.dirty.extend(self.listed.symmetric_difference(&listed).cloned());
        self.listed = listed;
        self.structural = false;
    }

    /// Diffs dirty records against the published list and applies the
    /// resulting membership update to it.
    fn emit_membership(&mut self) -> Result<Option<UpdateMessage>, MaintenanceError> {
        let mut update = MembershipUpdate::default();
        for key in std::mem::take(&mut self.dirty) {
            let desired = self
                .listed
                .contains(&key)
                .then(|| self.known.get(&key))
                .flatten()
                .map(|r| ListRecord { key: key.clone(), content: r.content.clone() });
            let current = self.published.get(&key);
            match (current, desired) {
                (None, None) => {}
                (Some(c), Some(d)) if same_ignoring_lb_index(&c, &d) => {}
                (c, d) => {
                    if c.is_some() {
                        update.removals.push(key.clone());
                    }
                    if let Some(d) = d {
                        update.additions.push(d);
                    }
                    self.batcher.discard(&key);
                }
            }
        }
        if update.is_empty() {
            return Ok(None);
        }
        let plain = encode_membership(&self.published, &update, false)?;
        let packed = encode_membership(&self.published, &update, true)?;
        let body = if packed.len() < plain.len() { packed } else { plain };
        self.published.apply_membership_update(&update)?;
        self.stats.membership_messages += 1;
        Ok(Some(UpdateMessage::Membership { update, body }))
    }
}
