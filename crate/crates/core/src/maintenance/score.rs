use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use crate::dns::RecordKey;

/// Exponentially weighted vote count of one record.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PopularityScore {
    pub n_weighted: f64,
    /// Round the value refers to; 0 before the first vote.
    pub last_round: u64,
}

fn decay(a: f64, rounds: u64) -> f64 {
    (1.0 - a).powi(rounds.min(i32::MAX as u64) as i32)
}

impl PopularityScore {
    /// Value carried forward to `round` with zero votes in between.
    pub fn value_at(&self, round: u64, a: f64) -> f64 {
        self.n_weighted * decay(a, round.saturating_sub(self.last_round))
    }
}

/// One scoring step: `a * occurrences + (1 - a)^(round - last) * prev`.
pub fn update_score(prev: PopularityScore, occurrences: u64, round: u64, a: f64) -> PopularityScore {
    debug_assert!(round > prev.last_round, "rounds must advance");
    PopularityScore { n_weighted: a * occurrences as f64 + prev.value_at(round, a), last_round: round }
}

/// Scores of every tracked record.
#[derive(Clone, Debug)]
pub struct ScoreBoard {
    a: f64,
    scores: HashMap<RecordKey, PopularityScore>,
}

impl ScoreBoard {
    pub fn new(a: f64) -> Self {
        Self { a, scores: HashMap::new() }
    }

    pub fn weight(&self) -> f64 {
        self.a
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, key: &RecordKey) -> Option<PopularityScore> {
        self.scores.get(key).copied()
    }

    /// Counts one vote for `key` in `round`; votes of the same round add `a`
    /// each, so the result equals tallying the round first.
    pub fn record_vote(&mut self, key: &RecordKey, round: u64) {
        let a = self.a;
        match self.scores.get_mut(key) {
            Some(s) => {
                if round > s.last_round {
                    s.n_weighted = s.value_at(round, a);
                    s.last_round = round;
                }
                s.n_weighted += a;
            }
            None => {
                self.scores.insert(key.clone(), PopularityScore { n_weighted: a, last_round: round });
            }
        }
    }

    /// Applies a whole round's tallies at once.
    pub fn record_round<'a, I>(&mut self, round: u64, tallies: I)
    where
        I: IntoIterator<Item = (&'a RecordKey, u64)>,
    {
        for (key, occ) in tallies {
            let prev = self.scores.get(key).copied().unwrap_or_default();
            self.scores.insert(key.clone(), update_score(prev, occ, round, self.a));
        }
    }

    pub fn value(&self, key: &RecordKey, round: u64) -> f64 {
        self.scores.get(key).map_or(0.0, |s| s.value_at(round, self.a))
    }

    /// The `n` highest-valued eligible keys at `round`. Ties keep incumbents,
    /// then fall back to key order.
    pub fn top_n(
        &self,
        n: usize,
        round: u64,
        incumbents: &BTreeSet<RecordKey>,
        eligible: impl Fn(&RecordKey) -> bool,
    ) -> BTreeSet<RecordKey> {
        let mut ranked: Vec<(f64, bool, &RecordKey)> = self
            .scores
            .iter()
            .filter(|(k, _)| eligible(k))
            .map(|(k, s)| (s.value_at(round, self.a), incumbents.contains(k), k))
            .filter(|(v, _, _)| *v > 0.0)
            .collect();
        let cmp = |x: &(f64, bool, &RecordKey), y: &(f64, bool, &RecordKey)| {
            y.0.partial_cmp(&x.0).unwrap_or(Ordering::Equal).then_with(|| y.1.cmp(&x.1)).then_with(|| x.2.cmp(y.2))
        };
        if ranked.len() > n && n > 0 {
            ranked.select_nth_unstable_by(n - 1, cmp);
        }
        ranked.truncate(n);
        ranked.into_iter().map(|(_, _, k)| k.clone()).collect()
    }

    /// Drops least recently voted keys outside `keep` until at most `cap`
    /// remain; lower values go first among equally old keys.
    pub fn evict(&mut self, cap: usize, round: u64, keep: &BTreeSet<RecordKey>) {
        if self.scores.len() <= cap {
            return;
        }
        let mut candidates: Vec<(u64, f64, RecordKey)> = self
            .scores
            .iter()
            .filter(|(k, _)| !keep.contains(*k))
            .map(|(k, s)| (s.last_round, s.value_at(round, self.a), k.clone()))
            .collect();
        candidates.sort_by(|x, y| {
            x.0.cmp(&y.0).then_with(|| x.1.partial_cmp(&y.1).unwrap_or(Ordering::Equal)).then_with(|| x.2.cmp(&y.2))
        });
        let excess = self.scores.len() - cap;
        for (_, _, k) in candidates.into_iter().take(excess) {
            self.scores.remove(&k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(i: u32) -> RecordKey {
        RecordKey::new(format!("d{i}.test").parse().unwrap(), crate::dns::RecordType::A)
    }

    #[test]
    fn first_round_from_zero() {
        let s = update_score(PopularityScore::default(), 10, 1, 0.1);
        assert!((s.n_weighted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn five_silent_rounds_decay() {
        let s = PopularityScore { n_weighted: 2.5, last_round: 3 };
        let t = update_score(s, 0, 8, 0.1);
        assert!((t.n_weighted - 2.5 * 0.9f64.powi(5)).abs() < 1e-12);
    }

    #[test]
    fn constant_votes_converge_to_the_rate() {
        let mut s = PopularityScore::default();
        for m in 1..=400 {
            s = update_score(s, 7, m, 0.1);
        }
        assert!((s.n_weighted - 7.0).abs() < 1e-9);
    }

    #[test]
    fn ties_keep_incumbent_then_key_order() {
        let mut board = ScoreBoard::new(0.1);
        for i in 0..4 {
            board.record_vote(&key(i), 1);
        }
        let incumbents: BTreeSet<_> = [key(3)].into();
        let top = board.top_n(2, 1, &incumbents, |_| true);
        assert_eq!(top, [key(0), key(3)].into());
    }

    #[test]
    fn eviction_spares_kept_and_recent() {
        let mut board = ScoreBoard::new(0.1);
        board.record_vote(&key(0), 1);
        board.record_vote(&key(1), 1);
        board.record_vote(&key(2), 2);
        board.record_vote(&key(3), 3);
        board.evict(2, 3, &[key(0)].into());
        assert!(board.get(&key(0)).is_some());
        assert!(board.get(&key(3)).is_some());
        assert_eq!(board.len(), 2);
    }

    proptest! {
        #[test]
        fn streaming_equals_tallying(rounds in prop::collection::vec(prop::collection::vec(0u32..5, 0..20), 1..30)) {
            let mut stream = ScoreBoard::new(0.1);
            let mut tally = ScoreBoard::new(0.1);
            for (m, votes) in rounds.iter().enumerate() {
                let m = m as u64 + 1;
                let mut counts: HashMap<RecordKey, u64> = HashMap::new();
                for &v in votes {
                    stream.record_vote(&key(v), m);
                    *counts.entry(key(v)).or_default() += 1;
                }
                tally.record_round(m, counts.iter().map(|(k, c)| (k, *c)));
            }
            let last = rounds.len() as u64;
            for i in 0..5 {
                let (x, y) = (stream.value(&key(i), last), tally.value(&key(i), last));
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
