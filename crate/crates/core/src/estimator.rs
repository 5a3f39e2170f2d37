//! Streaming load estimator.
//!
//! Per-eye samples are merged into frames, screened for physically
//! impossible values, and folded into [`EstimatorState`], which keeps
//!
//! * the running average over every frame since calibration ended,
//! * the average over the last [`WINDOW_LEN`] frames (fewer while warming up),
//! * the running maximum of that windowed average, seeded with the
//!   calibration `d_max`,
//!
//! and flags high load when the windowed average exceeds
//! `threshold_fraction × running_max`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::protocol::{Eye, PupilSample};
use crate::simulator::{MAX_DIAMETER_MM, MIN_DIAMETER_MM};

pub const WINDOW_LEN: usize = 15;
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.70;
/// Left/right samples further apart than this are not paired.
pub const PAIRING_WINDOW_US: i64 = 10_000;
/// Speed filter: jumps above `MAX_STEP_MM` within `SPEED_WINDOW_US` are artifacts.
pub const SPEED_WINDOW_US: i64 = 20_000;
pub const MAX_STEP_MM: f64 = 1.0;

/// Eye-merged diameter at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub ts: i64,
    pub diameter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadEstimate {
    pub ts: i64,
    pub running_avg: f64,
    pub windowed_avg: f64,
    pub running_max: f64,
    pub high_load: bool,
    pub frames_seen: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EstimatorError {
    #[error("no frames ingested yet")]
    NoData,
    #[error("threshold fraction must be in (0, 1)")]
    BadThreshold,
}

/// Mean of whichever samples are valid; `None` is a blink.
pub fn merge_eye_pair(
    left: Option<&PupilSample>,
    right: Option<&PupilSample>,
) -> Option<FrameSample> {
    let valid = |s: Option<&PupilSample>| s.filter(|s| s.is_valid()).copied();
    match (valid(left), valid(right)) {
        (Some(l), Some(r)) => Some(FrameSample {
            ts: (l.ts + r.ts).div_euclid(2),
            diameter: (l.diameter + r.diameter) / 2.0,
        }),
        (Some(s), None) | (None, Some(s)) => Some(FrameSample {
            ts: s.ts,
            diameter: s.diameter,
        }),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    OutOfRange,
    TooFast,
}

pub fn filter_sample(s: FrameSample, prev: Option<&FrameSample>) -> Result<FrameSample, Rejection> {
    if !(MIN_DIAMETER_MM..=MAX_DIAMETER_MM).contains(&s.diameter) {
        return Err(Rejection::OutOfRange);
    }
    if let Some(p) = prev {
        if s.ts - p.ts <= SPEED_WINDOW_US && (s.diameter - p.diameter).abs() > MAX_STEP_MM {
            return Err(Rejection::TooFast);
        }
    }
    Ok(s)
}

/// Pairs left/right samples arriving as separate datagrams.
///
/// Holds at most one sample. A sample is merged with the next one if that
/// is the other eye within [`PAIRING_WINDOW_US`]; otherwise it is emitted
/// on its own.
#[derive(Debug, Clone, Default)]
pub struct EyeMerger {
    pending: Option<PupilSample>,
}

impl EyeMerger {
    pub fn push(&mut self, s: PupilSample) -> Option<FrameSample> {
        match self.pending.take() {
            None => {
                self.pending = Some(s);
                None
            }
            Some(p) if p.eye != s.eye && (s.ts - p.ts).abs() <= PAIRING_WINDOW_US => {
                let (l, r) = if p.eye == Eye::Left { (p, s) } else { (s, p) };
                merge_eye_pair(Some(&l), Some(&r))
            }
            Some(p) => {
                self.pending = Some(s);
                merge_eye_pair(Some(&p), None)
            }
        }
    }

    pub fn flush(&mut self) -> Option<FrameSample> {
        self.pending
            .take()
            .and_then(|p| merge_eye_pair(Some(&p), None))
    }
}

/// Applies [`filter_sample`] against the last accepted frame.
#[derive(Debug, Clone, Default)]
pub struct FrameFilter {
    prev: Option<FrameSample>,
    rejected: u64,
}

impl FrameFilter {
    pub fn check(&mut self, f: FrameSample) -> Option<FrameSample> {
        match filter_sample(f, self.prev.as_ref()) {
            Ok(f) => {
                self.prev = Some(f);
                Some(f)
            }
            Err(_) => {
                self.rejected += 1;
                None
            }
        }
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }
}

/// Merge then filter.
#[derive(Debug, Clone, Default)]
pub struct FrameStage {
    merger: EyeMerger,
    filter: FrameFilter,
}

impl FrameStage {
    pub fn push(&mut self, s: PupilSample) -> Option<FrameSample> {
        self.merger.push(s).and_then(|f| self.filter.check(f))
    }

    pub fn flush(&mut self) -> Option<FrameSample> {
        self.merger.flush().and_then(|f| self.filter.check(f))
    }

    pub fn rejected(&self) -> u64 {
        self.filter.rejected()
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorState {
    frame_count: u64,
    running_sum: f64,
    window: VecDeque<f64>,
    running_max: f64,
    threshold_fraction: f64,
    profile: Option<CalibrationProfile>,
}

impl EstimatorState {
    pub fn new(
        threshold_fraction: f64,
        profile: Option<CalibrationProfile>,
    ) -> Result<Self, EstimatorError> {
        if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
            return Err(EstimatorError::BadThreshold);
        }
        Ok(Self {
            frame_count: 0,
            running_sum: 0.0,
            window: VecDeque::with_capacity(WINDOW_LEN),
            running_max: profile.as_ref().map_or(f64::NEG_INFINITY, |p| p.d_max),
            threshold_fraction,
            profile,
        })
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn threshold_fraction(&self) -> f64 {
        self.threshold_fraction
    }

    pub fn profile(&self) -> Option<&CalibrationProfile> {
        self.profile.as_ref()
    }

    pub fn ingest(&mut self, f: &FrameSample) {
        self.frame_count += 1;
        self.running_sum += f.diameter;
        if self.window.len() == WINDOW_LEN {
            self.window.pop_front();
        }
        self.window.push_back(f.diameter);
        let windowed = self.windowed_sum() / self.window.len() as f64;
        self.running_max = self.running_max.max(windowed);
    }

    // Oldest to newest; at most WINDOW_LEN terms.
    fn windowed_sum(&self) -> f64 {
        self.window.iter().sum()
    }

    pub fn running_avg(&self) -> Option<f64> {
        (self.frame_count > 0).then(|| self.running_sum / self.frame_count as f64)
    }

    pub fn windowed_avg(&self) -> Option<f64> {
        (!self.window.is_empty()).then(|| self.windowed_sum() / self.window.len() as f64)
    }

    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    pub fn current_estimate(&self, ts: i64) -> Result<LoadEstimate, EstimatorError> {
        let (Some(running_avg), Some(windowed_avg)) = (self.running_avg(), self.windowed_avg())
        else {
            return Err(EstimatorError::NoData);
        };
        Ok(LoadEstimate {
            ts,
            running_avg,
            windowed_avg,
            running_max: self.running_max,
            high_load: windowed_avg > self.threshold_fraction * self.running_max,
            frames_seen: self.frame_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::SampleCounts;

    fn sample(ts: i64, eye: Eye, d: f64, status: i32) -> PupilSample {
        PupilSample {
            ts,
            eye,
            diameter: d,
            status,
            seq: 0,
        }
    }

    fn frame(ts: i64, d: f64) -> FrameSample {
        FrameSample { ts, diameter: d }
    }

    fn state() -> EstimatorState {
        EstimatorState::new(DEFAULT_THRESHOLD_FRACTION, None).unwrap()
    }

    #[test]
    fn merge_cases() {
        let l = sample(0, Eye::Left, 3.0, 0);
        let r = sample(2, Eye::Right, 3.2, 0);
        let m = merge_eye_pair(Some(&l), Some(&r)).unwrap();
        assert!((m.diameter - 3.1).abs() < 1e-15);
        assert_eq!(m.ts, 1);
        let l_bad = sample(0, Eye::Left, 0.0, 1);
        assert_eq!(merge_eye_pair(Some(&l_bad), Some(&r)).unwrap().diameter, 3.2);
        let r_bad = sample(0, Eye::Right, 0.0, 1);
        assert_eq!(merge_eye_pair(Some(&l_bad), Some(&r_bad)), None);
        assert_eq!(merge_eye_pair(None, None), None);
    }

    #[test]
    fn merger_pairs_within_window() {
        let mut m = EyeMerger::default();
        assert_eq!(m.push(sample(0, Eye::Left, 3.0, 0)), None);
        assert_eq!(m.push(sample(0, Eye::Right, 4.0, 0)), Some(frame(0, 3.5)));
        // Right arrives 20 ms later: too far to pair, left goes out alone.
        assert_eq!(m.push(sample(20_000, Eye::Left, 3.0, 0)), None);
        assert_eq!(m.push(sample(40_000, Eye::Right, 4.0, 0)), Some(frame(20_000, 3.0)));
        assert_eq!(m.flush(), Some(frame(40_000, 4.0)));
        assert_eq!(m.flush(), None);
    }

    #[test]
    fn filter_cases() {
        let prev = frame(0, 3.4);
        assert!(filter_sample(frame(20_000, 3.5), Some(&prev)).is_ok());
        assert_eq!(filter_sample(frame(0, 0.4), None), Err(Rejection::OutOfRange));
        assert_eq!(filter_sample(frame(0, 10.5), None), Err(Rejection::OutOfRange));
        let prev = frame(0, 3.5);
        assert_eq!(
            filter_sample(frame(20_000, 5.0), Some(&prev)),
            Err(Rejection::TooFast)
        );
        assert!(filter_sample(frame(20_001, 5.0), Some(&prev)).is_ok());
    }

    #[test]
    fn running_avg_of_two() {
        let mut s = state();
        s.ingest(&frame(0, 2.0));
        s.ingest(&frame(1, 4.0));
        assert_eq!(s.running_avg(), Some(3.0));
    }

    #[test]
    fn window_keeps_last_fifteen() {
        let mut s = state();
        for i in 1..=20 {
            s.ingest(&frame(i, i as f64));
        }
        assert_eq!(s.windowed_avg(), Some(13.0));
        assert_eq!(s.running_avg(), Some(10.5));
    }

    #[test]
    fn partial_window_before_fifteen() {
        let mut s = state();
        for d in [3.0, 4.0, 5.0] {
            s.ingest(&frame(0, d));
        }
        assert_eq!(s.windowed_avg(), Some(4.0));
    }

    #[test]
    fn threshold_flag() {
        let profile = CalibrationProfile {
            d_min: 2.0,
            d_max: 6.0,
            created_ts: 0,
            sample_counts: SampleCounts { bright: 20, dim: 20 },
        };
        let mut s = EstimatorState::new(0.7, Some(profile)).unwrap();
        s.ingest(&frame(0, 4.3));
        let e = s.current_estimate(0).unwrap();
        assert_eq!(e.running_max, 6.0);
        assert!(e.high_load);

        let mut s = EstimatorState::new(0.7, Some(profile)).unwrap();
        s.ingest(&frame(0, 4.1));
        assert!(!s.current_estimate(0).unwrap().high_load);
    }

    #[test]
    fn no_data_is_an_error() {
        assert_eq!(state().current_estimate(0), Err(EstimatorError::NoData));
        assert_eq!(
            EstimatorState::new(1.0, None).unwrap_err(),
            EstimatorError::BadThreshold
        );
        assert!(EstimatorState::new(0.0, None).is_err());
    }

    #[test]
    fn running_max_tracks_windowed_avg() {
        let mut s = state();
        s.ingest(&frame(0, 5.0));
        assert_eq!(s.running_max(), 5.0);
        s.ingest(&frame(1, 3.0));
        assert_eq!(s.running_max(), 5.0);
    }
}
