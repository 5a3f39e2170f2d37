use std::io::BufRead;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::Args;
use gazeload_core::calibration::{
    compute_profile, CalibrationProfile, CalibrationSettings, Calibrator, Phase,
};
use gazeload_core::estimator::{EstimatorState, FrameStage};
use gazeload_core::pipeline::{EmitSchedule, Pipeline, PipelineConfig, PipelineEvent};
use gazeload_core::protocol::{receive_stream, DeviceEndpoint, PupilSample, StreamHandle};
use gazeload_core::simulator::ScenarioConfig;
use gazeload_core::{FrameSample, LoadEstimate};
use serde_json::json;

use crate::readout::Readout;
use crate::recorder::{markers_from_specs, session_id, HeaderInfo, Recorder};
use crate::GlobalConfig;

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Device address, host:port.
    #[arg(long)]
    device: String,
    /// Session log to write (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Run the light-reflex calibration before estimating.
    #[arg(long)]
    calibrate: bool,
    /// Bright phase length in seconds (with --calibrate).
    #[arg(long, default_value_t = 5.0)]
    bright: f64,
    /// Dim phase length in seconds (with --calibrate).
    #[arg(long, default_value_t = 5.0)]
    dim: f64,
    /// Load a calibration profile instead of calibrating.
    #[arg(long, conflicts_with = "calibrate")]
    profile: Option<PathBuf>,
    /// Scenario file whose `markers` are injected as session events.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Condition tag recorded in the header, key=value (repeatable).
    #[arg(long = "tag")]
    tags: Vec<String>,
    /// Use this session id (for reproducible logs).
    #[arg(long)]
    fixed_id: Option<String>,
    /// Stop after this many seconds of device time.
    #[arg(long)]
    duration: Option<f64>,
    /// Stop once the device has been silent this long (wall seconds).
    #[arg(long, default_value_t = 2.0)]
    idle_timeout: f64,
    /// Read event labels from stdin, one per line.
    #[arg(long)]
    events_stdin: bool,
    /// Suppress the live readout.
    #[arg(long)]
    quiet: bool,
}

/// Stops a sample loop.
pub(crate) struct Acquisition {
    pub idle_timeout: Duration,
    pub connect_timeout: Duration,
    pub max_duration_us: Option<i64>,
}

/// Feeds samples from `handle` to `f` until the device goes quiet, the
/// duration limit is hit, or `f` returns `false`.
pub(crate) fn acquire(
    handle: &StreamHandle,
    acq: &Acquisition,
    mut f: impl FnMut(PupilSample) -> Result<bool>,
) -> Result<()> {
    let started = Instant::now();
    let mut last_rx: Option<Instant> = None;
    let mut first_ts = None;
    loop {
        match handle.recv_timeout(Duration::from_millis(50)) {
            Ok(s) => {
                last_rx = Some(Instant::now());
                let first = *first_ts.get_or_insert(s.ts);
                if acq.max_duration_us.is_some_and(|max| s.ts - first >= max) {
                    return Ok(());
                }
                if !f(s)? {
                    return Ok(());
                }
            }
            Err(RecvTimeoutError::Timeout) => match last_rx {
                Some(t) if t.elapsed() >= acq.idle_timeout => return Ok(()),
                None if started.elapsed() >= acq.connect_timeout => {
                    bail!("no data from device within {:?}", acq.connect_timeout)
                }
                _ => {}
            },
            Err(RecvTimeoutError::Disconnected) => return Ok(()),
        }
    }
}

pub(crate) fn connect(device: &str) -> Result<StreamHandle> {
    let endpoint = DeviceEndpoint::parse(device)?;
    Ok(receive_stream(&endpoint)?)
}

/// Output of [`FrameRouter`].
enum Routed {
    Profile(CalibrationProfile),
    Pipeline(PipelineEvent),
}

/// Merges and filters samples, sends frames through calibration first (if
/// requested) and then through the estimator pipeline.
struct FrameRouter {
    stage: FrameStage,
    calibration: Option<CalibrationSettings>,
    calibrator: Option<Calibrator>,
    config: PipelineConfig,
    pipeline: Option<Pipeline>,
}

impl FrameRouter {
    fn new(config: PipelineConfig, calibration: Option<CalibrationSettings>) -> Self {
        Self {
            stage: FrameStage::default(),
            calibration,
            calibrator: None,
            config,
            pipeline: None,
        }
    }

    fn push_sample(&mut self, s: PupilSample, out: &mut impl FnMut(Routed) -> Result<()>) -> Result<()> {
        if let (Some(settings), None, None) = (self.calibration, &self.calibrator, &self.pipeline) {
            eprintln!("calibration: bright phase ({} s)", settings.bright_s);
            self.calibrator = Some(Calibrator::starting_at(settings, s.ts));
        }
        if let Some(f) = self.stage.push(s) {
            self.route(f, out)?;
        }
        Ok(())
    }

    fn route(&mut self, f: FrameSample, out: &mut impl FnMut(Routed) -> Result<()>) -> Result<()> {
        if let Some(cal) = self.calibrator.as_mut() {
            let before = cal.phase_at(f.ts.saturating_sub(1));
            match cal.push(f) {
                Phase::Done => {
                    let cal = self.calibrator.take().expect("present");
                    let samples = cal.finish()?;
                    let profile = compute_profile(&samples.bright, &samples.dim, samples.end_ts)?;
                    eprintln!(
                        "calibration: d_min {:.3} mm, d_max {:.3} mm",
                        profile.d_min, profile.d_max
                    );
                    self.config.profile = Some(profile);
                    out(Routed::Profile(profile))?;
                }
                Phase::Dim if before == Phase::Bright => {
                    eprintln!("calibration: dim phase");
                    return Ok(());
                }
                _ => return Ok(()),
            }
        }
        let pipeline = match self.pipeline.as_mut() {
            Some(p) => p,
            None => self.pipeline.insert(Pipeline::new(self.config.clone())?),
        };
        let mut events = Vec::with_capacity(4);
        pipeline.push_frame(f, &mut |e| events.push(e));
        for e in events {
            out(Routed::Pipeline(e))?;
        }
        Ok(())
    }

    fn finish(&mut self, out: &mut impl FnMut(Routed) -> Result<()>) -> Result<()> {
        if let Some(f) = self.stage.flush() {
            self.route(f, out)?;
        }
        if self.calibrator.is_some() {
            bail!("stream ended during calibration");
        }
        if let Some(p) = self.pipeline.as_mut() {
            let mut events = Vec::new();
            p.finish(&mut |e| events.push(e));
            for e in events {
                out(Routed::Pipeline(e))?;
            }
        }
        Ok(())
    }

    fn state(&self) -> Option<&EstimatorState> {
        self.pipeline.as_ref().map(|p| p.state())
    }
}

fn stdin_labels() -> Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in std::io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            let label = line.trim();
            if !label.is_empty() && tx.send(label.to_string()).is_err() {
                break;
            }
        }
    });
    rx
}

pub fn run(global: &GlobalConfig, args: StreamArgs) -> Result<()> {
    let tags = super::parse_tags(&args.tags)?;
    let markers = match &args.scenario {
        Some(p) => markers_from_specs(&ScenarioConfig::load(p)?.markers),
        None => Vec::new(),
    };
    let profile = match &args.profile {
        Some(p) => Some(CalibrationProfile::load(p).with_context(|| format!("{}", p.display()))?),
        None => None,
    };
    let calibration = args.calibrate.then_some(CalibrationSettings {
        bright_s: args.bright,
        dim_s: args.dim,
        ..Default::default()
    });
    if let Some(d) = args.duration {
        if !(d > 0.0) {
            bail!("--duration must be positive");
        }
    }

    let handle = connect(&args.device)?;
    let acq = Acquisition {
        idle_timeout: Duration::from_secs_f64(args.idle_timeout.max(0.05)),
        connect_timeout: Duration::from_secs(10),
        max_duration_us: args.duration.map(|d| (d * 1e6).round() as i64),
    };

    // The header is written lazily, so the device announce is known by then.
    let config = json!({
        "clock_mode": global.clock_mode,
        "emit_rate_hz": global.emit_rate_hz,
        "threshold_fraction": global.threshold_fraction,
        "calibration": calibration.map(|c| json!({"bright_s": c.bright_s, "dim_s": c.dim_s})),
    });
    let header = HeaderInfo {
        session_id: session_id(args.fixed_id.as_deref()),
        config,
        profile,
        tags,
    };
    let mut recorder = Recorder::create(&args.out, header, markers, Readout::new(!args.quiet))?;
    let labels = args.events_stdin.then(stdin_labels);
    let pipeline_config = PipelineConfig {
        emit_rate_hz: global.emit_rate_hz,
        threshold_fraction: global.threshold_fraction,
        profile,
        emit: global.fast(),
    };
    let router = FrameRouter::new(pipeline_config, calibration);

    let (result, handle) = if global.fast() {
        (run_fast(&handle, &acq, router, &mut recorder, labels.as_ref()), handle)
    } else {
        run_wall(handle, &acq, router, &mut recorder, labels.as_ref(), global.emit_rate_hz)
    };
    let stats = handle.stop();
    result?;
    let stats = stats?;
    let footer = recorder.finish()?;
    eprintln!(
        "session {}: {} frames, {} estimates, {} parse errors, {} sequence gaps",
        args.out.display(),
        footer.frame_total,
        footer.estimate_total,
        stats.parse_errors,
        stats.gaps
    );
    Ok(())
}

fn annotate(recorder: &mut Recorder, labels: Option<&Receiver<String>>) -> Result<()> {
    if let Some(rx) = labels {
        while let Ok(label) = rx.try_recv() {
            recorder.mark_now(&label)?;
        }
    }
    Ok(())
}

/// Copies the device announce into the header config before it is written.
fn note_device(recorder: &mut Recorder, handle: &StreamHandle) {
    if recorder.pending_header().is_some() {
        let stats = handle.stats();
        set_device(recorder, stats.device_id, stats.device_rate_hz);
    }
}

fn set_device(recorder: &mut Recorder, id: Option<String>, rate: Option<f64>) {
    if let Some(h) = recorder.pending_header() {
        h.config["device_id"] = json!(id);
        h.config["device_rate_hz"] = json!(rate);
    }
}

fn record_routed<'a>(
    recorder: &'a mut Recorder,
    handle: &'a StreamHandle,
) -> impl FnMut(Routed) -> Result<()> + 'a {
    move |r| match r {
        Routed::Profile(p) => {
            recorder.set_profile(Some(p));
            Ok(())
        }
        Routed::Pipeline(e) => {
            note_device(recorder, handle);
            recorder.on_event(e)
        }
    }
}

/// Single activity: emission is driven by the device clock, so the output
/// depends only on the sample stream.
fn run_fast(
    handle: &StreamHandle,
    acq: &Acquisition,
    mut router: FrameRouter,
    recorder: &mut Recorder,
    labels: Option<&Receiver<String>>,
) -> Result<()> {
    acquire(handle, acq, |s| {
        router.push_sample(s, &mut record_routed(recorder, handle))?;
        annotate(recorder, labels)?;
        Ok(true)
    })?;
    router.finish(&mut record_routed(recorder, handle))
}

enum LogItem {
    Device(Option<String>, Option<f64>),
    Profile(CalibrationProfile),
    Frame(FrameSample),
    Estimate(LoadEstimate),
}

/// Latest estimator state plus the device time it corresponds to.
struct Snapshot {
    state: EstimatorState,
    last_ts: i64,
    at: Instant,
}

/// Receiver, estimator and emitter as separate activities; the emitter
/// ticks on wall time and extrapolates device time from the last frame.
fn run_wall(
    handle: StreamHandle,
    acq: &Acquisition,
    mut router: FrameRouter,
    recorder: &mut Recorder,
    labels: Option<&Receiver<String>>,
    emit_rate_hz: f64,
) -> (Result<()>, StreamHandle) {
    let (log_tx, log_rx) = mpsc::sync_channel::<LogItem>(4096);
    let snapshot: Arc<Mutex<Option<Snapshot>>> = Arc::new(Mutex::new(None));
    let done = Arc::new(AtomicBool::new(false));

    thread::scope(|scope| {
        let estimator = {
            let log_tx = log_tx.clone();
            let snapshot = snapshot.clone();
            let done = done.clone();
            scope.spawn(move || -> (Result<()>, StreamHandle) {
                let mut device_sent = false;
                let mut forward = |r: Routed| -> Result<()> {
                    if !device_sent {
                        device_sent = true;
                        let stats = handle.stats();
                        log_tx.send(LogItem::Device(stats.device_id, stats.device_rate_hz)).ok();
                    }
                    let item = match r {
                        Routed::Profile(p) => LogItem::Profile(p),
                        Routed::Pipeline(PipelineEvent::Frame(f)) => LogItem::Frame(f),
                        Routed::Pipeline(PipelineEvent::Estimate(e)) => LogItem::Estimate(e),
                    };
                    log_tx.send(item).ok();
                    Ok(())
                };
                let result = acquire(&handle, acq, |s| {
                    router.push_sample(s, &mut forward)?;
                    if let Some(state) = router.state() {
                        *snapshot.lock().unwrap() = Some(Snapshot {
                            state: state.clone(),
                            last_ts: s.ts,
                            at: Instant::now(),
                        });
                    }
                    Ok(!done.load(Ordering::SeqCst))
                })
                .and_then(|_| router.finish(&mut forward));
                done.store(true, Ordering::SeqCst);
                (result, handle)
            })
        };

        let emitter = {
            let log_tx = log_tx.clone();
            let snapshot = snapshot.clone();
            let done = done.clone();
            scope.spawn(move || {
                let interval = Duration::from_secs_f64(EmitSchedule::new(emit_rate_hz).interval_us() / 1e6);
                let start = Instant::now();
                let mut k: u32 = 0;
                let mut last_ts = i64::MIN;
                while !done.load(Ordering::SeqCst) {
                    k += 1;
                    let due = start + interval * k;
                    if let Some(wait) = due.checked_duration_since(Instant::now()) {
                        thread::sleep(wait);
                    }
                    let guard = snapshot.lock().unwrap();
                    let Some(snap) = guard.as_ref() else { continue };
                    let ts = (snap.last_ts + snap.at.elapsed().as_micros() as i64).max(last_ts + 1);
                    if let Ok(e) = snap.state.current_estimate(ts) {
                        last_ts = ts;
                        if log_tx.send(LogItem::Estimate(e)).is_err() {
                            break;
                        }
                    }
                }
            })
        };
        drop(log_tx);

        let mut write_result = Ok(());
        for item in log_rx {
            let r = match item {
                LogItem::Profile(p) => {
                    recorder.set_profile(Some(p));
                    Ok(())
                }
                LogItem::Device(id, rate) => {
                    set_device(recorder, id, rate);
                    Ok(())
                }
                LogItem::Frame(f) => recorder.on_event(PipelineEvent::Frame(f)),
                LogItem::Estimate(e) => recorder.on_event(PipelineEvent::Estimate(e)),
            }
            .and_then(|_| annotate(recorder, labels));
            if let Err(e) = r {
                write_result = Err(e);
                done.store(true, Ordering::SeqCst);
                break;
            }
        }
        let (est, handle) = estimator.join().expect("estimator thread panicked");
        emitter.join().expect("emitter thread panicked");
        (est.and(write_result), handle)
    })
}
