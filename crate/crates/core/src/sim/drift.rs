use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util::rng_for;

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    Static,
    WorkloadSwitch,
    VolumeSwitch,
    BothSwitch,
    NonPeriodic,
}

/// Workload and data volume in force over an inclusive iteration range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub start: usize,
    pub end: usize,
    pub workload: usize,
    pub volume: f64,
}

/// Complete schedule over iterations `1..=len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftScript {
    entries: Vec<ScheduleEntry>,
}

pub const HIGH_VOLUME: f64 = 1.0;
pub const LOW_VOLUME: f64 = 0.1;

fn toggle(v: f64) -> f64 {
    if v == HIGH_VOLUME {
        LOW_VOLUME
    } else {
        HIGH_VOLUME
    }
}

impl DriftScript {
    /// Schedule that changes every `period` iterations. Workload switches
    /// alternate between workloads 0 and 1, volume switches between the high
    /// and low volume.
    pub fn periodic(mode: DriftMode, iterations: usize, period: usize) -> Result<Self, SimError> {
        if iterations == 0 || period == 0 {
            return Err(SimError::Config("iterations and period must be positive".into()));
        }
        let mut entries = Vec::new();
        let (mut workload, mut volume) = (0, HIGH_VOLUME);
        let mut start = 1;
        while start <= iterations {
            let end = match mode {
                DriftMode::Static => iterations,
                _ => (start + period - 1).min(iterations),
            };
            entries.push(ScheduleEntry { start, end, workload, volume });
            match mode {
                DriftMode::WorkloadSwitch | DriftMode::NonPeriodic => workload = 1 - workload,
                DriftMode::VolumeSwitch => volume = toggle(volume),
                DriftMode::BothSwitch => {
                    workload = 1 - workload;
                    volume = toggle(volume);
                }
                DriftMode::Static => {}
            }
            start = end + 1;
        }
        Self::custom(entries)
    }

    /// Workload switches at seeded intervals in `[min_run, max_run]`; the
    /// last run is never shorter than `min_run`.
    pub fn non_periodic(iterations: usize, min_run: usize, max_run: usize, seed: u64) -> Result<Self, SimError> {
        if min_run == 0 || max_run < min_run || iterations < min_run {
            return Err(SimError::Config("invalid non-periodic run bounds".into()));
        }
        let mut rng = rng_for(seed, &[0x4e50]);
        let mut entries: Vec<ScheduleEntry> = Vec::new();
        let (mut start, mut workload) = (1, 0);
        while start <= iterations {
            let remaining = iterations - start + 1;
            let mut len = rng.gen_range(min_run..=max_run).min(remaining);
            if remaining - len < min_run {
                len = remaining;
            }
            entries.push(ScheduleEntry {
                start,
                end: start + len - 1,
                workload,
                volume: HIGH_VOLUME,
            });
            workload = 1 - workload;
            start += len;
        }
        Self::custom(entries)
    }

    /// Validates that entries tile `1..=n` in order without gaps or overlaps.
    pub fn custom(entries: Vec<ScheduleEntry>) -> Result<Self, SimError> {
        if entries.is_empty() {
            return Err(SimError::Config("schedule is empty".into()));
        }
        let mut next = 1;
        for e in &entries {
            if e.end < e.start {
                return Err(SimError::Config(format!("schedule entry {}..{} is reversed", e.start, e.end)));
            }
            if e.start < next {
                return Err(SimError::Config(format!("schedule entries overlap at iteration {}", e.start)));
            }
            if e.start > next {
                return Err(SimError::Config(format!("schedule has a gap before iteration {}", e.start)));
            }
            if !(e.volume.is_finite() && e.volume > 0.0) {
                return Err(SimError::Config(format!("volume {} is not positive", e.volume)));
            }
            next = e.end + 1;
        }
        Ok(DriftScript { entries })
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.end)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn workload_count(&self) -> usize {
        self.entries.iter().map(|e| e.workload + 1).max().unwrap_or(0)
    }

    /// `(workload, volume)` at 1-based iteration `t`.
    pub fn at(&self, t: usize) -> Option<(usize, f64)> {
        self.entries
            .iter()
            .find(|e| e.start <= t && t <= e.end)
            .map(|e| (e.workload, e.volume))
    }

    /// True when workload or volume differs from iteration `t - 1`.
    pub fn drift_flag(&self, t: usize) -> bool {
        if t <= 1 {
            return false;
        }
        match (self.at(t - 1), self.at(t)) {
            (Some(a), Some(b)) => a != b,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_workload_switch() {
        let s = DriftScript::periodic(DriftMode::WorkloadSwitch, 10, 3).unwrap();
        let w: Vec<usize> = (1..=10).map(|t| s.at(t).unwrap().0).collect();
        assert_eq!(w, vec![0, 0, 0, 1, 1, 1, 0, 0, 0, 1]);
        let flags: Vec<usize> = (1..=10).filter(|&t| s.drift_flag(t)).collect();
        assert_eq!(flags, vec![4, 7, 10]);
    }

    #[test]
    fn volume_switch_keeps_workload() {
        let s = DriftScript::periodic(DriftMode::VolumeSwitch, 6, 2).unwrap();
        assert!((1..=6).all(|t| s.at(t).unwrap().0 == 0));
        assert_eq!(s.at(3).unwrap().1, LOW_VOLUME);
        assert_eq!(s.at(5).unwrap().1, HIGH_VOLUME);
    }

    #[test]
    fn static_never_drifts() {
        let s = DriftScript::periodic(DriftMode::Static, 7, 2).unwrap();
        assert!((1..=7).all(|t| !s.drift_flag(t)));
        assert_eq!(s.len(), 7);
    }

    #[test]
    fn non_periodic_bounds() {
        for seed in 0..50 {
            let s = DriftScript::non_periodic(40, 2, 8, seed).unwrap();
            assert_eq!(s.len(), 40);
            for e in s.entries() {
                let len = e.end - e.start + 1;
                assert!(len >= 2, "seed {seed}: run {len}");
            }
        }
    }

    #[test]
    fn custom_rejects_gaps_and_overlaps() {
        let e = |start, end| ScheduleEntry { start, end, workload: 0, volume: 1.0 };
        assert!(DriftScript::custom(vec![e(1, 3), e(5, 6)]).is_err());
        assert!(DriftScript::custom(vec![e(1, 3), e(3, 6)]).is_err());
        assert!(DriftScript::custom(vec![e(2, 3)]).is_err());
        assert!(DriftScript::custom(vec![e(1, 3), e(4, 6)]).is_ok());
    }
}
