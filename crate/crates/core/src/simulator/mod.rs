//! Deterministic synthetic eye tracker.
//!
//! The pupil signal is `baseline + light reflex + task-evoked dilations +
//! gaussian noise`, clamped to the physical range, with blink intervals
//! reported as `status = 1, diameter = 0`. Every sample is a pure function
//! of `(config, t, eye)`: noise is drawn from an xorshift64* stream keyed by
//! the sample timestamp and eye, and blinks come from a schedule derived
//! once from the seed.

mod server;

use serde::{Deserialize, Serialize};

use crate::protocol::{Eye, PupilSample};
use crate::rng::XorShift64Star;
use crate::US_PER_S;

pub use server::{run_server, ServerHandle, ServerOptions, ServerReport, StopReason};

pub const MIN_DIAMETER_MM: f64 = 1.0;
pub const MAX_DIAMETER_MM: f64 = 10.0;

const BLINK_STREAM: u64 = 0xB11C;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Brightness {
    Bright,
    Dim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightStep {
    pub t_on: f64,
    pub brightness: Brightness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub t: f64,
    pub amplitude_mm: f64,
}

/// A blink placed explicitly by the scenario, on top of the random ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlinkSpec {
    pub t: f64,
    pub duration_ms: f64,
}

/// Event label the recorder should inject at `t` (seconds of device time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub t: f64,
    pub label: String,
}

/// Physiological constants of the signal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalModel {
    /// Full constriction in bright light.
    pub light_amplitude_mm: f64,
    pub light_latency_s: f64,
    pub light_tau_s: f64,
    pub task_latency_s: f64,
    /// Time from response onset to peak dilation.
    pub task_tau_s: f64,
}

impl Default for SignalModel {
    fn default() -> Self {
        Self {
            light_amplitude_mm: 1.2,
            light_latency_s: 0.2,
            light_tau_s: 0.4,
            task_latency_s: 0.3,
            task_tau_s: 1.0,
        }
    }
}

impl SignalModel {
    /// Diameter change from the light reflex at time `t`.
    ///
    /// Constriction relaxes exponentially toward the level set by the most
    /// recent effective step (full amplitude when bright, zero when dim),
    /// starting from wherever the previous step had left it.
    pub fn light_delta(&self, steps: &[LightStep], t: f64) -> f64 {
        let mut level = 0.0;
        let mut target = 0.0;
        let mut since = f64::NEG_INFINITY;
        let mut ordered: Vec<&LightStep> = steps.iter().collect();
        ordered.sort_by(|a, b| a.t_on.total_cmp(&b.t_on));
        for step in ordered {
            let effective = step.t_on + self.light_latency_s;
            if effective > t {
                break;
            }
            level = self.relax(level, target, effective - since);
            target = match step.brightness {
                Brightness::Bright => self.light_amplitude_mm,
                Brightness::Dim => 0.0,
            };
            since = effective;
        }
        -self.relax(level, target, t - since)
    }

    fn relax(&self, level: f64, target: f64, elapsed: f64) -> f64 {
        if elapsed.is_infinite() {
            return target;
        }
        target + (level - target) * (-elapsed / self.light_tau_s).exp()
    }

    /// Task-evoked dilation of one event at time `t` (gamma-like pulse
    /// peaking at `amplitude` one `task_tau_s` after onset).
    pub fn task_delta(&self, event: &TaskEvent, t: f64) -> f64 {
        let x = (t - event.t - self.task_latency_s) / self.task_tau_s;
        if x < 0.0 {
            0.0
        } else {
            event.amplitude_mm * x * (1.0 - x).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
    pub sample_rate_hz: f64,
    pub baseline_mm: f64,
    pub noise_sigma_mm: f64,
    pub light_steps: Vec<LightStep>,
    pub task_events: Vec<TaskEvent>,
    pub blink_rate_hz: f64,
    /// `[min, max]` in milliseconds.
    pub blink_duration_ms: [f64; 2],
    pub blinks: Vec<BlinkSpec>,
    pub markers: Vec<MarkerSpec>,
    pub device_id: String,
    pub model: SignalModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: 60.0,
            sample_rate_hz: 50.0,
            baseline_mm: 3.5,
            noise_sigma_mm: 0.05,
            light_steps: Vec::new(),
            task_events: Vec::new(),
            blink_rate_hz: 0.25,
            blink_duration_ms: [100.0, 300.0],
            blinks: Vec::new(),
            markers: Vec::new(),
            device_id: "sim01".to_string(),
            model: SignalModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(&'static str),
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
}

impl ScenarioConfig {
    /// Noise-free, blink-free configuration: output is the closed-form signal.
    pub fn noiseless(duration: f64) -> Self {
        Self {
            duration,
            noise_sigma_mm: 0.0,
            blink_rate_hz: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sample_rate_hz) {
            return Err(ConfigError::Invalid("sample_rate_hz must be > 0"));
        }
        if !positive(self.duration) {
            return Err(ConfigError::Invalid("duration must be > 0"));
        }
        if !(MIN_DIAMETER_MM..=MAX_DIAMETER_MM).contains(&self.baseline_mm) {
            return Err(ConfigError::Invalid("baseline_mm must be in [1, 10]"));
        }
        if !(self.noise_sigma_mm >= 0.0 && self.noise_sigma_mm.is_finite()) {
            return Err(ConfigError::Invalid("noise_sigma_mm must be >= 0"));
        }
        if self
            .task_events
            .iter()
            .any(|e| !(e.amplitude_mm >= 0.0 && e.t.is_finite()))
        {
            return Err(ConfigError::Invalid("task amplitudes must be >= 0"));
        }
        if self.light_steps.iter().any(|s| !s.t_on.is_finite()) {
            return Err(ConfigError::Invalid("light step times must be finite"));
        }
        if !(self.blink_rate_hz >= 0.0 && self.blink_rate_hz.is_finite()) {
            return Err(ConfigError::Invalid("blink_rate_hz must be >= 0"));
        }
        let [lo, hi] = self.blink_duration_ms;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(ConfigError::Invalid("blink_duration_ms must be 0 < min <= max"));
        }
        if self.blinks.iter().any(|b| !(b.duration_ms > 0.0)) {
            return Err(ConfigError::Invalid("blink durations must be > 0"));
        }
        let m = &self.model;
        if !(positive(m.light_tau_s) && positive(m.task_tau_s))
            || m.light_latency_s < 0.0
            || m.task_latency_s < 0.0
            || m.light_amplitude_mm < 0.0
        {
            return Err(ConfigError::Invalid("signal model constants out of range"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Precomputed view of a scenario: blink schedule and tick times.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScenarioConfig,
    /// Half-open `[start, end)` intervals in microseconds.
    blinks: Vec<(i64, i64)>,
}

fn to_us(t: f64) -> i64 {
    (t * US_PER_S).round() as i64
}

impl Simulator {
    pub fn new(config: ScenarioConfig) -> Self {
        let mut blinks: Vec<(i64, i64)> = config
            .blinks
            .iter()
            .map(|b| (to_us(b.t), to_us(b.t + b.duration_ms / 1000.0)))
            .collect();
        if config.blink_rate_hz > 0.0 {
            let mut rng = XorShift64Star::keyed(config.seed, BLINK_STREAM);
            let [lo, hi] = config.blink_duration_ms;
            let mut t = 0.0;
            loop {
                t += rng.next_exp(config.blink_rate_hz);
                if t >= config.duration {
                    break;
                }
                let dur_ms = lo + (hi - lo) * rng.next_f64();
                blinks.push((to_us(t), to_us(t + dur_ms / 1000.0)));
            }
        }
        blinks.sort_unstable();
        Self { config, blinks }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn blink_intervals(&self) -> &[(i64, i64)] {
        &self.blinks
    }

    pub fn in_blink(&self, ts_us: i64) -> bool {
        // Intervals are sorted by start; only earlier starts can cover ts.
        let upto = self.blinks.partition_point(|(start, _)| *start <= ts_us);
        self.blinks[..upto].iter().any(|(_, end)| ts_us < *end)
    }

    /// Number of ticks per eye: all `k` with `t_k < duration`.
    pub fn tick_count(&self) -> u64 {
        let mut k = (self.config.duration * self.config.sample_rate_hz).ceil() as u64;
        while k > 0 && self.tick_ts(k - 1) >= to_us(self.config.duration) {
            k -= 1;
        }
        k
    }

    pub fn tick_ts(&self, k: u64) -> i64 {
        (k as f64 * US_PER_S / self.config.sample_rate_hz).round() as i64
    }

    /// Noise-free, clamped diameter at `t` seconds.
    pub fn clean_diameter(&self, t: f64) -> f64 {
        let c = &self.config;
        let light = c.model.light_delta(&c.light_steps, t);
        let task: f64 = c.task_events.iter().map(|e| c.model.task_delta(e, t)).sum();
        (c.baseline_mm + light + task).clamp(MIN_DIAMETER_MM, MAX_DIAMETER_MM)
    }

    pub fn sample_at(&self, ts_us: i64, eye: Eye) -> PupilSample {
        let c = &self.config;
        if self.in_blink(ts_us) {
            return PupilSample {
                ts: ts_us,
                eye,
                diameter: 0.0,
                status: 1,
                seq: 0,
            };
        }
        let t = ts_us as f64 / US_PER_S;
        let light = c.model.light_delta(&c.light_steps, t);
        let task: f64 = c.task_events.iter().map(|e| c.model.task_delta(e, t)).sum();
        let noise = if c.noise_sigma_mm > 0.0 {
            let key = (ts_us as u64) << 1 | matches!(eye, Eye::Right) as u64;
            c.noise_sigma_mm * XorShift64Star::keyed(c.seed, key).next_gaussian()
        } else {
            0.0
        };
        PupilSample {
            ts: ts_us,
            eye,
            diameter: (c.baseline_mm + light + task + noise).clamp(MIN_DIAMETER_MM, MAX_DIAMETER_MM),
            status: 0,
            seq: 0,
        }
    }

    /// The full datagram-ordered sample stream: for each tick, left then
    /// right, with `seq` counting datagrams from 0.
    pub fn samples(&self) -> impl Iterator<Item = PupilSample> + '_ {
        (0..self.tick_count())
            .flat_map(move |k| {
                let ts = self.tick_ts(k);
                [self.sample_at(ts, Eye::Left), self.sample_at(ts, Eye::Right)]
            })
            .enumerate()
            .map(|(i, mut s)| {
                s.seq = i as u32;
                s
            })
    }
}

/// One sample at `t` seconds. Pure in `(config, t, eye)`; `seq` is left at 0.
pub fn generate_sample(config: &ScenarioConfig, t: f64, eye: Eye) -> PupilSample {
    Simulator::new(config.clone()).sample_at(to_us(t), eye)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_baseline_without_noise() {
        let cfg = ScenarioConfig::noiseless(10.0);
        let s = generate_sample(&cfg, 2.0, Eye::Left);
        assert_eq!(s.diameter, 3.5);
        assert_eq!(s.status, 0);
        assert_eq!(s.ts, 2_000_000);
        let sim = Simulator::new(cfg);
        assert!(sim.samples().all(|s| s.diameter == 3.5 && s.status == 0));
    }

    #[test]
    fn bright_step_limit() {
        let mut cfg = ScenarioConfig::noiseless(100.0);
        cfg.light_steps.push(LightStep {
            t_on: 1.0,
            brightness: Brightness::Bright,
        });
        let far = generate_sample(&cfg, 60.0, Eye::Right).diameter;
        assert!((far - 2.3).abs() < 1e-12, "{far}");
        // Nothing happens before the latency elapses.
        assert_eq!(generate_sample(&cfg, 1.2, Eye::Left).diameter, 3.5);
        // One time constant after onset: 1 - 1/e of the amplitude.
        let one_tau = generate_sample(&cfg, 1.6, Eye::Left).diameter;
        let expected = 3.5 - 1.2 * (1.0 - (-1.0f64).exp());
        assert!((one_tau - expected).abs() < 1e-12);
    }

    #[test]
    fn dim_step_releases_symmetrically() {
        let mut cfg = ScenarioConfig::noiseless(100.0);
        cfg.light_steps = vec![
            LightStep {
                t_on: 0.0,
                brightness: Brightness::Bright,
            },
            LightStep {
                t_on: 30.0,
                brightness: Brightness::Dim,
            },
        ];
        let model = cfg.model;
        let sim = Simulator::new(cfg);
        for dt in [0.1, 0.4, 1.0, 2.5] {
            let constricting = 3.5 - sim.clean_diameter(0.2 + dt);
            let releasing = 3.5 - sim.clean_diameter(30.2 + dt);
            let level_at_release = model.light_amplitude_mm * (1.0 - (-30.0f64 / 0.4).exp());
            assert!((constricting + releasing - level_at_release).abs() < 1e-9);
        }
        assert!((sim.clean_diameter(90.0) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_samples() {
        let cfg = ScenarioConfig {
            seed: 99,
            ..ScenarioConfig::default()
        };
        for t in [0.0, 0.02, 13.37, 59.98] {
            assert_eq!(
                generate_sample(&cfg, t, Eye::Left),
                generate_sample(&cfg, t, Eye::Left)
            );
        }
        let a = generate_sample(&cfg, 1.0, Eye::Left).diameter;
        let b = generate_sample(&cfg, 1.0, Eye::Right).diameter;
        assert_ne!(a, b, "eyes carry independent noise");
    }

    #[test]
    fn scheduled_blink_covers_ten_ticks() {
        let mut cfg = ScenarioConfig::noiseless(3.0);
        cfg.blinks.push(BlinkSpec {
            t: 1.0,
            duration_ms: 200.0,
        });
        let sim = Simulator::new(cfg);
        for eye in [Eye::Left, Eye::Right] {
            let flags: Vec<bool> = sim
                .samples()
                .filter(|s| s.eye == eye)
                .map(|s| s.status != 0)
                .collect();
            assert_eq!(flags.iter().filter(|b| **b).count(), 10);
            let first = flags.iter().position(|b| *b).unwrap();
            assert_eq!(first, 50);
            assert!(flags[50..60].iter().all(|b| *b));
        }
        assert!(sim.samples().filter(|s| s.status != 0).all(|s| s.diameter == 0.0));
    }

    #[test]
    fn tick_counts() {
        let sim = Simulator::new(ScenarioConfig::noiseless(2.0));
        assert_eq!(sim.tick_count(), 100);
        assert_eq!(sim.samples().count(), 200);
        let last = sim.samples().last().unwrap();
        assert_eq!(last.seq, 199);
        assert_eq!(last.ts, 1_980_000);
    }

    #[test]
    fn random_blinks_follow_rate() {
        let cfg = ScenarioConfig {
            seed: 3,
            duration: 4000.0,
            ..ScenarioConfig::default()
        };
        let n = Simulator::new(cfg).blink_intervals().len() as f64;
        // Poisson(1000): well within 5 sigma.
        assert!((n - 1000.0).abs() < 160.0, "{n}");
    }

    #[test]
    fn validation() {
        let ok = ScenarioConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ScenarioConfig {
                sample_rate_hz: 0.0,
                ..ok.clone()
            },
            ScenarioConfig {
                baseline_mm: 0.5,
                ..ok.clone()
            },
            ScenarioConfig {
                duration: 0.0,
                ..ok.clone()
            },
            ScenarioConfig {
                task_events: vec![TaskEvent {
                    t: 1.0,
                    amplitude_mm: -1.0,
                }],
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn scenario_json_defaults() {
        let cfg = ScenarioConfig::from_json(
            r#"{"seed":5,"duration":12,"light_steps":[{"t_on":0,"brightness":"bright"}],
                "task_events":[{"t":3,"amplitude_mm":0.6}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.sample_rate_hz, 50.0);
        assert_eq!(cfg.light_steps[0].brightness, Brightness::Bright);
        assert!(ScenarioConfig::from_json(r#"{"baseline_mm":20}"#).is_err());
    }
}
