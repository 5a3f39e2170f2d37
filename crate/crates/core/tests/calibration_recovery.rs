use gazeload_core::calibration::{compute_profile, run_calibration, CalibrationError, CalibrationSettings};
use gazeload_core::estimator::FrameStage;
use gazeload_core::protocol::PupilSample;
use gazeload_core::simulator::{Brightness, LightStep, ScenarioConfig, Simulator};
use gazeload_core::FrameSample;

fn calibration_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        duration: 10.0,
        light_steps: vec![
            LightStep {
                t_on: 0.0,
                brightness: Brightness::Bright,
            },
            LightStep {
                t_on: 5.0,
                brightness: Brightness::Dim,
            },
        ],
        ..Default::default()
    }
}

fn frames(samples: impl Iterator<Item = PupilSample>) -> Vec<FrameSample> {
    let mut stage = FrameStage::default();
    let mut out: Vec<FrameSample> = samples.filter_map(|s| stage.push(s)).collect();
    out.extend(stage.flush());
    out
}

#[test]
fn phase_sizes_at_fifty_hertz() {
    let sim = Simulator::new(calibration_scenario(1));
    let s = run_calibration(frames(sim.samples()), CalibrationSettings::default()).unwrap();
    // (5 - 1) s × 50 Hz per phase, minus frames lost to blinks.
    assert!((180..=200).contains(&s.bright.len()), "{}", s.bright.len());
    assert!((180..=200).contains(&s.dim.len()), "{}", s.dim.len());
}

#[test]
fn recovers_ground_truth() {
    for seed in 0..10 {
        let sim = Simulator::new(calibration_scenario(seed));
        let s = run_calibration(frames(sim.samples()), CalibrationSettings::default()).unwrap();
        let p = compute_profile(&s.bright, &s.dim, s.end_ts).unwrap();
        assert!((p.d_min - 2.3).abs() <= 0.1, "seed {seed}: {}", p.d_min);
        assert!((p.d_max - 3.5).abs() <= 0.1, "seed {seed}: {}", p.d_max);
        assert_eq!(p.created_ts, 10_000_000);
    }
}

#[test]
fn all_invalid_is_insufficient() {
    let samples = Simulator::new(calibration_scenario(0))
        .samples()
        .map(|mut s| {
            s.status = 2;
            s.diameter = 0.0;
            s
        })
        .collect::<Vec<_>>();
    let err = run_calibration(frames(samples.into_iter()), CalibrationSettings::default()).unwrap_err();
    assert!(matches!(err, CalibrationError::InsufficientData { .. }));
}

#[test]
fn deterministic_runs() {
    let run = || {
        let sim = Simulator::new(calibration_scenario(77));
        run_calibration(frames(sim.samples()), CalibrationSettings::default()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn percentiles_resist_four_percent_corruption() {
    for seed in 0..10 {
        let sim = Simulator::new(calibration_scenario(seed));
        let s = run_calibration(frames(sim.samples()), CalibrationSettings::default()).unwrap();
        let clean = compute_profile(&s.bright, &s.dim, 0).unwrap();
        for extreme in [1.0, 10.0] {
            // Overwrite 4% of the frames, spread evenly through the phase.
            let corrupt = |v: &[FrameSample]| -> Vec<FrameSample> {
                let k = v.len() * 4 / 100;
                let mut out = v.to_vec();
                for j in 0..k {
                    out[j * v.len() / k].diameter = extreme;
                }
                out
            };
            let (b, d) = (corrupt(&s.bright), corrupt(&s.dim));
            let changed = |a: &[FrameSample], b: &[FrameSample]| {
                a.iter().zip(b).filter(|(x, y)| x.diameter != y.diameter).count()
            };
            assert!(changed(&s.bright, &b) <= s.bright.len() * 4 / 100);
            assert!(changed(&s.bright, &b) >= 1);
            let p = compute_profile(&b, &d, 0).unwrap();
            assert!((p.d_min - clean.d_min).abs() < 0.05, "seed {seed}");
            assert!((p.d_max - clean.d_max).abs() < 0.05, "seed {seed}");
        }
    }
}
