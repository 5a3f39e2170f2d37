//! Light-reflex calibration.
//!
//! The user sits through a bright phase followed by a dim phase. The first
//! second of each phase is discarded while the reflex settles; the 5th
//! percentile of the bright frames becomes `d_min` and the 95th percentile
//! of the dim frames becomes `d_max`.

use serde::{Deserialize, Serialize};

use crate::estimator::FrameSample;
use crate::simulator::{MAX_DIAMETER_MM, MIN_DIAMETER_MM};
use crate::US_PER_S;

pub const MIN_PHASE_FRAMES: usize = 20;
pub const MIN_RANGE_MM: f64 = 0.3;
pub const SETTLE_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub bright: u64,
    pub dim: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProfile {
    pub d_min: f64,
    pub d_max: f64,
    pub created_ts: i64,
    pub sample_counts: SampleCounts,
}

impl CalibrationProfile {
    pub fn load(path: &std::path::Path) -> Result<Self, CalibrationError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CalibrationError::Io(e.to_string()))?;
        let p: Self =
            serde_json::from_str(&text).map_err(|e| CalibrationError::Io(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let range = MIN_DIAMETER_MM..=MAX_DIAMETER_MM;
        if !range.contains(&self.d_min) || !range.contains(&self.d_max) {
            return Err(CalibrationError::OutOfRange);
        }
        if self.d_max - self.d_min < MIN_RANGE_MM {
            return Err(CalibrationError::RangeTooSmall {
                d_min: self.d_min,
                d_max: self.d_max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("insufficient data: {bright} bright and {dim} dim frames (need {MIN_PHASE_FRAMES} each)")]
    InsufficientData { bright: usize, dim: usize },
    #[error("no usable light reflex: d_max {d_max:.3} - d_min {d_min:.3} < {MIN_RANGE_MM} mm")]
    RangeTooSmall { d_min: f64, d_max: f64 },
    #[error("profile diameters outside the physical range")]
    OutOfRange,
    #[error("profile i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub bright_s: f64,
    pub dim_s: f64,
    pub settle_s: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            bright_s: 5.0,
            dim_s: 5.0,
            settle_s: SETTLE_S,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationSamples {
    pub bright: Vec<FrameSample>,
    pub dim: Vec<FrameSample>,
    /// Timestamp at which the dim phase ended.
    pub end_ts: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Bright,
    Dim,
    Done,
}

/// Incremental collector; feed it frames until it reports [`Phase::Done`].
#[derive(Debug, Clone)]
pub struct Calibrator {
    settings: CalibrationSettings,
    start_ts: Option<i64>,
    samples: CalibrationSamples,
}

impl Calibrator {
    /// Phases are timed from the first frame pushed.
    pub fn new(settings: CalibrationSettings) -> Self {
        Self {
            settings,
            start_ts: None,
            samples: CalibrationSamples::default(),
        }
    }

    /// Phases are timed from `start_ts`.
    pub fn starting_at(settings: CalibrationSettings, start_ts: i64) -> Self {
        Self {
            start_ts: Some(start_ts),
            ..Self::new(settings)
        }
    }

    fn offset_us(s: f64) -> i64 {
        (s * US_PER_S).round() as i64
    }

    pub fn phase_at(&self, ts: i64) -> Phase {
        let start = self.start_ts.unwrap_or(ts);
        let bright_end = start + Self::offset_us(self.settings.bright_s);
        let dim_end = bright_end + Self::offset_us(self.settings.dim_s);
        if ts < bright_end {
            Phase::Bright
        } else if ts < dim_end {
            Phase::Dim
        } else {
            Phase::Done
        }
    }

    /// Returns the phase `f` fell into. A `Done` frame is not consumed.
    pub fn push(&mut self, f: FrameSample) -> Phase {
        let start = *self.start_ts.get_or_insert(f.ts);
        let settle = Self::offset_us(self.settings.settle_s);
        let bright_end = start + Self::offset_us(self.settings.bright_s);
        let phase = self.phase_at(f.ts);
        match phase {
            Phase::Bright if f.ts >= start + settle => self.samples.bright.push(f),
            Phase::Dim if f.ts >= bright_end + settle => self.samples.dim.push(f),
            _ => {}
        }
        phase
    }

    /// Completes the run even if the stream ended early.
    pub fn finish(mut self) -> Result<CalibrationSamples, CalibrationError> {
        let (b, d) = (self.samples.bright.len(), self.samples.dim.len());
        if b < MIN_PHASE_FRAMES || d < MIN_PHASE_FRAMES {
            return Err(CalibrationError::InsufficientData { bright: b, dim: d });
        }
        let start = self.start_ts.unwrap_or_default();
        self.samples.end_ts = start
            + Self::offset_us(self.settings.bright_s)
            + Self::offset_us(self.settings.dim_s);
        Ok(self.samples)
    }
}

/// Drives a [`Calibrator`] over a frame stream, stopping at the first frame
/// past the dim phase.
pub fn run_calibration(
    frames: impl IntoIterator<Item = FrameSample>,
    settings: CalibrationSettings,
) -> Result<CalibrationSamples, CalibrationError> {
    let mut cal = Calibrator::new(settings);
    for f in frames {
        if cal.push(f) == Phase::Done {
            break;
        }
    }
    cal.finish()
}

/// Percentile with linear interpolation between order statistics
/// (`p` in `[0, 1]`, input must be sorted and non-empty).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_diameters(frames: &[FrameSample]) -> Vec<f64> {
    let mut v: Vec<f64> = frames.iter().map(|f| f.diameter).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn compute_profile(
    bright: &[FrameSample],
    dim: &[FrameSample],
    created_ts: i64,
) -> Result<CalibrationProfile, CalibrationError> {
    if bright.is_empty() || dim.is_empty() {
        return Err(CalibrationError::InsufficientData {
            bright: bright.len(),
            dim: dim.len(),
        });
    }
    let d_min = percentile_sorted(&sorted_diameters(bright), 0.05);
    let d_max = percentile_sorted(&sorted_diameters(dim), 0.95);
    let profile = CalibrationProfile {
        d_min,
        d_max,
        created_ts,
        sample_counts: SampleCounts {
            bright: bright.len() as u64,
            dim: dim.len() as u64,
        },
    };
    profile.validate()?;
    Ok(profile)
}
