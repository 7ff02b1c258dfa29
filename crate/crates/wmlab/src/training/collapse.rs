use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::lam::CodebookStats;

/// Thresholds read qualitatively off the collapse curves; configurable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseConfig {
    /// Alarm when max_usage >= this ...
    pub max_usage_hi: f32,
    /// ... or utilization <= utilization_lo_codes / K ...
    pub utilization_lo_codes: f32,
    /// ... sustained over this many consecutive records.
    pub window: usize,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self { max_usage_hi: 0.9, utilization_lo_codes: 2.0, window: 50 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapseAlarm {
    pub step: u64,
    /// The offending metric trajectory over the sustained window.
    pub trajectory: Vec<(u64, CodebookStats)>,
}

/// Fires when the degenerate condition holds at every one of the last
/// `window` records.
#[derive(Clone, Debug)]
pub struct CollapseDetector {
    cfg: CollapseConfig,
    k: usize,
    recent: VecDeque<(u64, CodebookStats, bool)>,
}

impl CollapseDetector {
    pub fn new(cfg: CollapseConfig, k: usize) -> Self {
        Self { cfg, k, recent: VecDeque::new() }
    }

    pub fn config(&self) -> &CollapseConfig {
        &self.cfg
    }

    fn degenerate(&self, s: &CodebookStats) -> bool {
        s.max_usage >= self.cfg.max_usage_hi
            || s.utilization <= self.cfg.utilization_lo_codes / self.k as f32
    }

    pub fn observe(&mut self, step: u64, stats: CodebookStats) -> Option<CollapseAlarm> {
        let flag = self.degenerate(&stats);
        self.recent.push_back((step, stats, flag));
        if self.recent.len() > self.cfg.window {
            self.recent.pop_front();
        }
        if self.recent.len() == self.cfg.window && self.recent.iter().all(|(_, _, f)| *f) {
            Some(CollapseAlarm {
                step,
                trajectory: self.recent.iter().map(|(s, st, _)| (*s, *st)).collect(),
            })
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(utilization: f32, max_usage: f32) -> CodebookStats {
        CodebookStats { utilization, max_usage, entropy: 1.0 }
    }

    #[test]
    fn healthy_stream_never_alarms() {
        let mut d = CollapseDetector::new(CollapseConfig::default(), 16);
        for step in 0..200 {
            assert!(d.observe(step, stats(0.8, 0.2)).is_none());
        }
    }

    #[test]
    fn degenerate_stream_alarms_after_window() {
        let mut d = CollapseDetector::new(CollapseConfig::default(), 16);
        let mut fired = None;
        for step in 0..60 {
            if let Some(a) = d.observe(step, stats(0.9, 1.0)) {
                fired = Some(a);
                break;
            }
        }
        let alarm = fired.expect("single-code stream must alarm");
        assert_eq!(alarm.step, 49, "fires exactly when the window fills");
        assert_eq!(alarm.trajectory.len(), 50);
        assert_eq!(alarm.trajectory[0].1.max_usage, 1.0);
    }

    #[test]
    fn low_utilization_alone_also_alarms() {
        let mut d = CollapseDetector::new(CollapseConfig::default(), 16);
        // utilization 2/16 exactly at threshold
        let mut fired = false;
        for step in 0..50 {
            fired = d.observe(step, stats(2.0 / 16.0, 0.3)).is_some();
        }
        assert!(fired);
    }

    #[test]
    fn a_single_healthy_record_resets_the_run() {
        let mut d = CollapseDetector::new(CollapseConfig::default(), 16);
        for step in 0..49 {
            assert!(d.observe(step, stats(0.05, 1.0)).is_none());
        }
        assert!(d.observe(49, stats(0.9, 0.2)).is_none());
        // window now contains one healthy record; 49 more bad ones needed
        for step in 50..99 {
            assert!(d.observe(step, stats(0.05, 1.0)).is_none());
        }
        assert!(d.observe(99, stats(0.05, 1.0)).is_some());
    }

    #[test]
    fn thresholds_are_configuration() {
        let cfg = CollapseConfig { max_usage_hi: 0.5, utilization_lo_codes: 1.0, window: 3 };
        let mut d = CollapseDetector::new(cfg, 4);
        assert_eq!(d.config().window, 3);
        for step in 0..2 {
            assert!(d.observe(step, stats(0.7, 0.6)).is_none());
        }
        assert!(d.observe(2, stats(0.7, 0.6)).is_some(), "custom max_usage threshold applies");
    }
}
