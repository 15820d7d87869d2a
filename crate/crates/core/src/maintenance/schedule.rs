use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::time::Duration;

use crate::dns::RecordKey;

/// Pending re-query instants, one per scheduled record.
///
/// Rescheduling leaves a stale heap entry behind; it is skipped on pop by
/// comparing sequence numbers.
#[derive(Clone, Debug, Default)]
pub struct TtlSchedule {
    heap: BinaryHeap<Reverse<(Duration, u64, RecordKey)>>,
    pending: HashMap<RecordKey, (Duration, u64)>,
    seq: u64,
}

impl TtlSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.pending.contains_key(key)
    }

    pub fn due_at(&self, key: &RecordKey) -> Option<Duration> {
        self.pending.get(key).map(|p| p.0)
    }

    /// Sets (or replaces) the single pending expiry of `key`.
    pub fn schedule(&mut self, key: RecordKey, at: Duration) {
        self.seq += 1;
        self.pending.insert(key.clone(), (at, self.seq));
        self.heap.push(Reverse((at, self.seq, key)));
        if self.heap.len() > 2 * self.pending.len() + 64 {
            self.compact();
        }
    }

    pub fn remove(&mut self, key: &RecordKey) -> bool {
        self.pending.remove(key).is_some()
    }

    /// Earliest pending expiry.
    pub fn next_due(&mut self) -> Option<Duration> {
        while let Some(Reverse((at, seq, key))) = self.heap.peek() {
            if self.pending.get(key) == Some(&(*at, *seq)) {
                return Some(*at);
            }
            self.heap.pop();
        }
        None
    }

    /// Removes and returns every key due at or before `now`, earliest first.
    pub fn pop_due(&mut self, now: Duration) -> Vec<RecordKey> {
        let mut out = Vec::new();
        while let Some(Reverse((at, seq, key))) = self.heap.peek() {
            if *at > now {
                break;
            }
            let live = self.pending.get(key) == Some(&(*at, *seq));
            let Reverse((_, _, key)) = self.heap.pop().expect("peeked");
            if live {
                self.pending.remove(&key);
                out.push(key);
            }
        }
        out
    }

    fn compact(&mut self) {
        self.heap = self.pending.iter().map(|(k, &(at, seq))| Reverse((at, seq, k.clone()))).collect();
    }
}
