use std::collections::{BTreeMap, HashSet};

use super::client::MisbehaviorReport;
use super::server::ClientId;

pub const DEFAULT_REPORT_THRESHOLD: usize = 5;
pub const DEFAULT_REPORT_WINDOW: u64 = 24;

/// Correlates path reports: a shuffler is flagged once it appears in
/// `threshold` distinct reports within the last `window` rounds.
#[derive(Clone, Debug)]
pub struct MisbehaviorTracker {
    threshold: usize,
    window: u64,
    reports: BTreeMap<u64, HashSet<(ClientId, Vec<usize>)>>,
}

impl Default for MisbehaviorTracker {
    fn default() -> Self {
        Self::new(DEFAULT_REPORT_THRESHOLD, DEFAULT_REPORT_WINDOW)
    }
}

impl MisbehaviorTracker {
    pub fn new(threshold: usize, window: u64) -> Self {
        Self { threshold, window, reports: BTreeMap::new() }
    }

    fn oldest(&self, now: u64) -> u64 {
        now.saturating_sub(self.window.saturating_sub(1))
    }

    /// Returns false for reports outside the window or already seen.
    pub fn record(&mut self, reporter: ClientId, report: &MisbehaviorReport, now: u64) -> bool {
        if report.t_timestamp > now || report.t_timestamp < self.oldest(now) || report.path.is_empty() {
            return false;
        }
        let oldest = self.oldest(now);
        self.reports = self.reports.split_off(&oldest);
        self.reports.entry(report.t_timestamp).or_default().insert((reporter, report.path.clone()))
    }

    pub fn flagged(&self, now: u64) -> Vec<usize> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for set in self.reports.range(self.oldest(now)..=now).map(|(_, s)| s) {
            for (_, path) in set {
                let distinct: HashSet<&usize> = path.iter().collect();
                for &j in distinct {
                    *counts.entry(j).or_default() += 1;
                }
            }
        }
        counts.into_iter().filter(|&(_, c)| c >= self.threshold).map(|(j, _)| j).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(t: u64, path: &[usize]) -> MisbehaviorReport {
        MisbehaviorReport { t_timestamp: t, path: path.to_vec() }
    }

    #[test]
    fn flags_after_five_distinct_reports() {
        let mut m = MisbehaviorTracker::default();
        for (i, other) in [1, 2, 3, 4].iter().enumerate() {
            assert!(m.record(i as u32, &report(10, &[7, *other]), 10));
        }
        assert!(!m.record(0, &report(10, &[7, 1]), 10));
        assert!(m.flagged(10).is_empty());
        assert!(m.record(9, &report(10, &[5, 7, 7]), 10));
        assert_eq!(m.flagged(10), vec![7]);
    }

    #[test]
    fn reports_expire_after_window() {
        let mut m = MisbehaviorTracker::default();
        for r in 0..5u32 {
            m.record(r, &report(1, &[3]), 1);
        }
        assert_eq!(m.flagged(24), vec![3]);
        assert!(m.flagged(25).is_empty());
        assert!(!m.record(0, &report(1, &[3]), 25));
        assert!(!m.record(0, &report(30, &[3]), 25));
    }
}
