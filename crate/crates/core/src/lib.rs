//! Real-time cognitive-load estimation from pupil diameter.
//!
//! The crate is organised as a pipeline:
//!
//! * [`protocol`] – the UDP/JSON device wire format and the receiving client.
//! * [`simulator`] – a deterministic synthetic eye tracker serving that format.
//! * [`estimator`] – eye merging, artifact filtering and the running average,
//!   15-frame windowed average and 70%-of-maximum load flag.
//! * [`calibration`] – the bright/dim light-reflex phase that produces a
//!   per-user [`CalibrationProfile`].
//! * [`pipeline`] – glues the estimator to a fixed-rate emitter (17.5 Hz).
//! * [`session`] – JSONL session logs, replay helpers and event-aligned traces.
//! * [`analysis`] – peak counting, per-session features and Pearson
//!   correlation with two-tailed significance.

pub mod analysis;
pub mod calibration;
pub mod estimator;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod session;
pub mod simulator;

pub use analysis::{
    correlate_features, count_peaks, p_value, pearson_r, CorrelationResult, Feature,
    SessionFeatures, StatsError,
};
pub use calibration::{
    compute_profile, run_calibration, CalibrationError, CalibrationProfile, CalibrationSamples,
    CalibrationSettings, Calibrator, SampleCounts,
};
pub use estimator::{
    filter_sample, merge_eye_pair, EstimatorError, EstimatorState, EyeMerger, FrameFilter,
    FrameSample, LoadEstimate, WINDOW_LEN,
};
pub use pipeline::{EmitSchedule, Pipeline, PipelineConfig, PipelineEvent};
pub use protocol::{
    parse_datagram, serialize_datagram, Datagram, DeviceEndpoint, Eye, KeepaliveOp,
    ProtocolError, PupilSample,
};
pub use session::{load_session, EventMarker, Session, SessionRecord, SessionWriter};
pub use simulator::{generate_sample, ScenarioConfig, SignalModel};

/// Microseconds per second, the unit of every timestamp in the crate.
pub const US_PER_S: f64 = 1_000_000.0;
