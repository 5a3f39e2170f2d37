use gazeload_core::calibration::{CalibrationProfile, SampleCounts};
use gazeload_core::pipeline::{estimates, Pipeline, PipelineConfig, PipelineEvent};
use gazeload_core::protocol::{Eye, PupilSample};
use gazeload_core::simulator::{ScenarioConfig, Simulator, TaskEvent};
use gazeload_core::{EstimatorState, FrameSample, LoadEstimate, WINDOW_LEN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// From-scratch recomputation of every per-frame quantity.
struct Oracle {
    running_avg: Vec<f64>,
    windowed_avg: Vec<f64>,
    running_max: Vec<f64>,
    flags: Vec<bool>,
}

fn oracle(diameters: &[f64], init_max: f64, fraction: f64) -> Oracle {
    let mut prefix = vec![0.0];
    for d in diameters {
        prefix.push(prefix.last().unwrap() + d);
    }
    let mut o = Oracle {
        running_avg: vec![],
        windowed_avg: vec![],
        running_max: vec![],
        flags: vec![],
    };
    for n in 1..=diameters.len() {
        o.running_avg.push(prefix[n] / n as f64);
        let lo = n.saturating_sub(WINDOW_LEN);
        let w = &diameters[lo..n];
        let mut sum = 0.0;
        for d in w {
            sum += d;
        }
        o.windowed_avg.push(sum / w.len() as f64);
        let max = o
            .windowed_avg
            .iter()
            .fold(init_max, |m, v| if *v > m { *v } else { m });
        o.running_max.push(max);
        o.flags.push(o.windowed_avg[n - 1] > fraction * max);
    }
    o
}

fn per_frame(diameters: &[f64], fraction: f64, profile: Option<CalibrationProfile>) -> Vec<LoadEstimate> {
    let mut s = EstimatorState::new(fraction, profile).unwrap();
    diameters
        .iter()
        .enumerate()
        .map(|(i, d)| {
            s.ingest(&FrameSample {
                ts: i as i64,
                diameter: *d,
            });
            s.current_estimate(i as i64).unwrap()
        })
        .collect()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

fn random_trace(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(1.0..10.0)).collect()
}

#[test]
fn ten_thousand_frames_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trace = random_trace(&mut rng, 10_000);
    let o = oracle(&trace, f64::NEG_INFINITY, 0.7);
    let est = per_frame(&trace, 0.7, None);
    for (i, e) in est.iter().enumerate() {
        assert!(rel_close(e.running_avg, o.running_avg[i], 1e-9), "running avg at {i}");
        assert!(rel_close(e.windowed_avg, o.windowed_avg[i], 1e-9), "window at {i}");
        assert_eq!(e.windowed_avg, o.windowed_avg[i], "window exactness at {i}");
        assert_eq!(e.running_max, o.running_max[i]);
        assert_eq!(e.high_load, o.flags[i]);
        assert_eq!(e.frames_seen, i as u64 + 1);
    }
}

#[test]
fn trapezoid_flags_match_oracle() {
    // 3.0 → 6.0 over 60 frames, hold 60, back down over 60.
    let mut trace = vec![3.0; 30];
    trace.extend((0..60).map(|i| 3.0 + 3.0 * i as f64 / 60.0));
    trace.extend(std::iter::repeat(6.0).take(60));
    trace.extend((0..60).map(|i| 6.0 - 3.0 * i as f64 / 60.0));
    trace.extend(std::iter::repeat(3.0).take(30));
    let profile = CalibrationProfile {
        d_min: 2.3,
        d_max: 3.5,
        created_ts: 0,
        sample_counts: SampleCounts { bright: 200, dim: 200 },
    };
    let o = oracle(&trace, 3.5, 0.7);
    let flags: Vec<bool> = per_frame(&trace, 0.7, Some(profile))
        .iter()
        .map(|e| e.high_load)
        .collect();
    assert_eq!(flags, o.flags);
    // Sanity on the shape: low at the end, high on the plateau.
    assert!(flags[150]);
    assert!(!flags[trace.len() - 1]);
}

fn blinky_samples(seed: u64, n_ticks: i64) -> (Vec<PupilSample>, Vec<PupilSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    let mut seq = 0u32;
    let mut d = 4.0;
    for k in 0..n_ticks {
        d = (d + rng.gen_range(-0.05..0.05f64)).clamp(2.0, 8.0);
        for eye in [Eye::Left, Eye::Right] {
            let invalid = rng.gen_bool(0.10);
            all.push(PupilSample {
                ts: k * 20_000,
                eye,
                diameter: if invalid { 0.0 } else { d + rng.gen_range(-0.02..0.02) },
                status: if invalid { 1 } else { 0 },
                seq,
            });
            seq += 1;
        }
    }
    let kept = all.iter().filter(|s| s.is_valid()).copied().collect();
    (all, kept)
}

#[test]
fn blink_injection_only_excludes() {
    for seed in 0..20 {
        let (all, kept) = blinky_samples(seed, 3000);
        let a = Pipeline::run(PipelineConfig::default(), all).unwrap();
        let b = Pipeline::run(PipelineConfig::default(), kept).unwrap();
        assert_eq!(a, b, "seed {seed}");
        assert!(estimates(&a).count() > 1000);
    }
}

#[test]
fn identical_inputs_identical_outputs() {
    let cfg = ScenarioConfig {
        seed: 5,
        duration: 30.0,
        task_events: vec![TaskEvent {
            t: 10.0,
            amplitude_mm: 1.0,
        }],
        ..Default::default()
    };
    let sim = Simulator::new(cfg);
    let a = Pipeline::run(PipelineConfig::default(), sim.samples()).unwrap();
    let b = Pipeline::run(PipelineConfig::default(), sim.samples()).unwrap();
    assert_eq!(a, b);
    let frames = a.iter().filter(|e| matches!(e, PipelineEvent::Frame(_))).count();
    // 1500 ticks minus the ones lost to blinks on both eyes.
    assert!(frames > 1350 && frames <= 1500, "{frames}");
}

proptest! {
    #[test]
    fn averages_stay_within_observed_range(trace in proptest::collection::vec(1.0f64..10.0, 1..300)) {
        let est = per_frame(&trace, 0.7, None);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut prev_max = f64::NEG_INFINITY;
        let slack = 1e-12;
        for (i, e) in est.iter().enumerate() {
            lo = lo.min(trace[i]);
            hi = hi.max(trace[i]);
            prop_assert!(e.running_avg >= lo * (1.0 - slack) && e.running_avg <= hi * (1.0 + slack));
            prop_assert!(e.windowed_avg >= lo * (1.0 - slack) && e.windowed_avg <= hi * (1.0 + slack));
            prop_assert!(e.running_max >= prev_max);
            prop_assert_eq!(e.high_load, e.windowed_avg > 0.7 * e.running_max);
            prev_max = e.running_max;
        }
    }

    #[test]
    fn raising_threshold_never_adds_flags(
        trace in proptest::collection::vec(1.0f64..10.0, 1..300),
        a in 0.05f64..0.95,
        b in 0.05f64..0.95,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let count = |f| per_frame(&trace, f, None).iter().filter(|e| e.high_load).count();
        prop_assert!(count(hi) <= count(lo));
    }
}
