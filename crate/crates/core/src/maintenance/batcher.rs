use std::collections::BTreeMap;
use std::time::Duration;

use crate::dns::RecordKey;
use crate::list::{LbUpdate, PopularityList};

/// Collects pool-pointer shifts and releases them as one batch at most once
/// per interval.
#[derive(Clone, Debug)]
pub struct LbBatcher {
    interval: Duration,
    pending: BTreeMap<RecordKey, i64>,
    last_emit: Option<Duration>,
}

impl LbBatcher {
    pub fn new(interval: Duration) -> Self {
        Self { interval, pending: BTreeMap::new(), last_emit: None }
    }

    pub fn queue(&mut self, key: RecordKey, offset: i64) {
        *self.pending.entry(key).or_default() += offset;
    }

    pub fn discard(&mut self, key: &RecordKey) {
        self.pending.remove(key);
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn ready(&self, now: Duration) -> bool {
        self.last_emit.is_none_or(|t| now >= t + self.interval)
    }

    /// Coalesced updates addressed by entry index in `list`, or `None` when
    /// the interval has not elapsed or nothing net remains. Keys no longer in
    /// the pool are dropped.
    pub fn flush(&mut self, now: Duration, list: &PopularityList) -> Option<Vec<LbUpdate>> {
        if !self.ready(now) || self.pending.is_empty() {
            return None;
        }
        let mut out = Vec::new();
        for (key, offset) in std::mem::take(&mut self.pending) {
            let Some(entry) = list.pool().entry_index(&key) else { continue };
            let n = list.pool().group_at(entry).expect("indexed").answers.len() as i64;
            let net = offset.rem_euclid(n);
            if net != 0 {
                out.push(LbUpdate { entry: entry as u32, offset: net as i16 });
            }
        }
        if out.is_empty() {
            return None;
        }
        out.sort_by_key(|u| u.entry);
        self.last_emit = Some(now);
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dns::{RecordAnswer, RecordType};
    use crate::list::ListRecord;
    use std::net::Ipv4Addr;

    fn list_with(groups: &[(&str, u8)]) -> PopularityList {
        PopularityList::build(groups.iter().map(|(n, size)| {
            ListRecord::load_balanced(
                RecordKey::new(n.parse().unwrap(), RecordType::A),
                (0..*size).map(|i| RecordAnswer::A(Ipv4Addr::new(10, 0, 0, i))).collect(),
                0,
            )
        }))
        .unwrap()
    }

    fn key(n: &str) -> RecordKey {
        RecordKey::new(n.parse().unwrap(), RecordType::A)
    }

    #[test]
    fn coalesces_same_entry() {
        let list = list_with(&[("a.test", 5)]);
        let mut b = LbBatcher::new(Duration::from_secs(60));
        b.queue(key("a.test"), 1);
        b.queue(key("a.test"), 2);
        assert_eq!(b.flush(Duration::ZERO, &list), Some(vec![LbUpdate { entry: 0, offset: 3 }]));
    }

    #[test]
    fn nothing_queued_gives_none() {
        let list = list_with(&[("a.test", 5)]);
        let mut b = LbBatcher::new(Duration::from_secs(60));
        assert_eq!(b.flush(Duration::ZERO, &list), None);
        b.queue(key("a.test"), 5);
        assert_eq!(b.flush(Duration::ZERO, &list), None);
    }

    #[test]
    fn at_most_once_per_interval() {
        let list = list_with(&[("a.test", 5), ("b.test", 3)]);
        let mut b = LbBatcher::new(Duration::from_secs(60));
        b.queue(key("a.test"), 1);
        assert!(b.flush(Duration::from_secs(10), &list).is_some());
        b.queue(key("b.test"), 1);
        assert!(b.flush(Duration::from_secs(69), &list).is_none());
        assert_eq!(b.flush(Duration::from_secs(70), &list), Some(vec![LbUpdate { entry: 1, offset: 1 }]));
    }

    #[test]
    fn hundred_entries_in_one_message() {
        let names: Vec<String> = (0..100).map(|i| format!("h{i:03}.test")).collect();
        let groups: Vec<(&str, u8)> = names.iter().map(|n| (n.as_str(), 4)).collect();
        let list = list_with(&groups);
        let mut b = LbBatcher::new(Duration::from_secs(60));
        for n in &names {
            b.queue(key(n), 1);
        }
        let batch = b.flush(Duration::ZERO, &list).unwrap();
        assert_eq!(batch.len(), 100);
        assert_eq!(crate::list::encode_lb_batch(&batch).len(), 2 + 100 * 5);
    }
}
