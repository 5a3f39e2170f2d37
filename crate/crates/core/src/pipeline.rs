//! Estimator plus fixed-rate emitter, driven by frame timestamps.
//!
//! Emission ticks sit at `anchor + k / emit_rate_hz` on the device clock,
//! where `anchor` is the first frame's timestamp. A tick at `T` reports the
//! state after every frame with `ts <= T`; it is released once a frame with
//! a later timestamp arrives (or on [`Pipeline::finish`]). When frames stop
//! arriving for a while, the backlog of ticks is released on the next frame
//! and repeats the held values with their own tick timestamps.

use crate::calibration::CalibrationProfile;
use crate::estimator::{
    EstimatorError, EstimatorState, FrameSample, FrameStage, LoadEstimate,
    DEFAULT_THRESHOLD_FRACTION,
};
use crate::protocol::PupilSample;
use crate::US_PER_S;

pub const DEFAULT_EMIT_RATE_HZ: f64 = 17.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PipelineEvent {
    /// A frame that passed filtering and was ingested.
    Frame(FrameSample),
    Estimate(LoadEstimate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub emit_rate_hz: f64,
    pub threshold_fraction: f64,
    pub profile: Option<CalibrationProfile>,
    /// When false, only frames are reported and emission is left to an
    /// external clock reading [`Pipeline::state`].
    pub emit: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            emit_rate_hz: DEFAULT_EMIT_RATE_HZ,
            threshold_fraction: DEFAULT_THRESHOLD_FRACTION,
            profile: None,
            emit: true,
        }
    }
}

/// Tick times `anchor + round(k · 1e6 / rate)` in microseconds.
#[derive(Debug, Clone)]
pub struct EmitSchedule {
    rate_hz: f64,
    anchor: Option<i64>,
    next_k: u64,
}

impl EmitSchedule {
    pub fn new(rate_hz: f64) -> Self {
        assert!(rate_hz > 0.0 && rate_hz.is_finite(), "emit rate must be positive");
        Self {
            rate_hz,
            anchor: None,
            next_k: 0,
        }
    }

    pub fn anchor(&mut self, ts: i64) {
        self.anchor.get_or_insert(ts);
    }

    pub fn next_due(&self) -> Option<i64> {
        self.anchor
            .map(|a| a + (self.next_k as f64 * US_PER_S / self.rate_hz).round() as i64)
    }

    pub fn advance(&mut self) {
        self.next_k += 1;
    }

    pub fn interval_us(&self) -> f64 {
        US_PER_S / self.rate_hz
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    stage: FrameStage,
    state: EstimatorState,
    schedule: Option<EmitSchedule>,
    last_frame_ts: Option<i64>,
    emitted: u64,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, EstimatorError> {
        Ok(Self {
            stage: FrameStage::default(),
            state: EstimatorState::new(config.threshold_fraction, config.profile)?,
            schedule: config.emit.then(|| EmitSchedule::new(config.emit_rate_hz)),
            last_frame_ts: None,
            emitted: 0,
        })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn rejected(&self) -> u64 {
        self.stage.rejected()
    }

    /// Merges, filters and ingests one raw sample.
    pub fn push_sample(&mut self, s: PupilSample, out: &mut impl FnMut(PipelineEvent)) {
        if let Some(f) = self.stage.push(s) {
            self.push_frame(f, out);
        }
    }

    /// Ingests an already merged and filtered frame.
    pub fn push_frame(&mut self, f: FrameSample, out: &mut impl FnMut(PipelineEvent)) {
        self.release_ticks(|due| due < f.ts, out);
        if let Some(s) = self.schedule.as_mut() {
            s.anchor(f.ts);
        }
        self.state.ingest(&f);
        self.last_frame_ts = Some(f.ts);
        out(PipelineEvent::Frame(f));
    }

    /// Flushes the eye merger and releases ticks up to the last frame.
    pub fn finish(&mut self, out: &mut impl FnMut(PipelineEvent)) {
        if let Some(f) = self.stage.flush() {
            self.push_frame(f, out);
        }
        if let Some(last) = self.last_frame_ts {
            self.release_ticks(|due| due <= last, out);
        }
    }

    fn release_ticks(&mut self, releasable: impl Fn(i64) -> bool, out: &mut impl FnMut(PipelineEvent)) {
        let Some(schedule) = self.schedule.as_mut() else {
            return;
        };
        while let Some(due) = schedule.next_due().filter(|d| releasable(*d)) {
            schedule.advance();
            if let Ok(e) = self.state.current_estimate(due) {
                self.emitted += 1;
                out(PipelineEvent::Estimate(e));
            }
        }
    }

    /// Runs a whole sample sequence and collects the events.
    pub fn run(
        config: PipelineConfig,
        samples: impl IntoIterator<Item = PupilSample>,
    ) -> Result<Vec<PipelineEvent>, EstimatorError> {
        let mut p = Self::new(config)?;
        let mut events = Vec::new();
        let mut push = |e| events.push(e);
        for s in samples {
            p.push_sample(s, &mut push);
        }
        p.finish(&mut push);
        Ok(events)
    }
}

pub fn estimates(events: &[PipelineEvent]) -> impl Iterator<Item = &LoadEstimate> {
    events.iter().filter_map(|e| match e {
        PipelineEvent::Estimate(e) => Some(e),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: i64, step_us: i64) -> impl Iterator<Item = FrameSample> {
        (0..n).map(move |k| FrameSample {
            ts: k * step_us,
            diameter: 3.0 + (k % 7) as f64 * 0.1,
        })
    }

    fn run_frames(fs: impl Iterator<Item = FrameSample>) -> Vec<LoadEstimate> {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let mut out = Vec::new();
        let mut sink = |e| {
            if let PipelineEvent::Estimate(e) = e {
                out.push(e)
            }
        };
        for f in fs {
            p.push_frame(f, &mut sink);
        }
        p.finish(&mut sink);
        out
    }

    #[test]
    fn tick_times_and_count() {
        // 10 s at 50 Hz: frames up to 9.98 s, ticks at k * 57142.857 us.
        let est = run_frames(frames(500, 20_000));
        assert_eq!(est.len(), 175);
        assert_eq!(est[0].ts, 0);
        assert_eq!(est[1].ts, 57_143);
        assert_eq!(est[7].ts, 400_000);
        // Tick 0 sees only the first frame.
        assert_eq!(est[0].frames_seen, 1);
        // Tick at 400 ms sees frames 0..=20.
        assert_eq!(est[7].frames_seen, 21);
    }

    #[test]
    fn stalled_ingest_repeats_values() {
        let mut fs: Vec<FrameSample> = frames(50, 20_000).collect();
        // 2 s gap with no frames.
        fs.extend(frames(50, 20_000).map(|f| FrameSample {
            ts: f.ts + 3_000_000,
            ..f
        }));
        let est = run_frames(fs.into_iter());
        let held: Vec<&LoadEstimate> = est
            .iter()
            .filter(|e| e.ts > 980_000 && e.ts < 3_000_000)
            .collect();
        assert!(held.len() >= 30);
        assert!(held.windows(2).all(|w| w[0].ts < w[1].ts
            && w[0].windowed_avg == w[1].windowed_avg
            && w[0].frames_seen == w[1].frames_seen));
    }

    #[test]
    fn no_emission_without_frames() {
        assert!(run_frames(std::iter::empty()).is_empty());
    }

    #[test]
    fn external_emission_mode() {
        let mut p = Pipeline::new(PipelineConfig {
            emit: false,
            ..Default::default()
        })
        .unwrap();
        let mut n_est = 0;
        for f in frames(100, 20_000) {
            p.push_frame(f, &mut |e| {
                if matches!(e, PipelineEvent::Estimate(_)) {
                    n_est += 1
                }
            });
        }
        assert_eq!(n_est, 0);
        assert_eq!(p.state().frame_count(), 100);
    }
}
