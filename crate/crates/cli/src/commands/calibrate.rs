use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Result};
use clap::Args;
use gazeload_core::calibration::{compute_profile, CalibrationSettings, Calibrator, Phase};
use gazeload_core::estimator::FrameStage;

use super::stream::{acquire, connect, Acquisition};
use crate::GlobalConfig;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Device address, host:port.
    #[arg(long)]
    device: String,
    /// Bright phase length in seconds.
    #[arg(long, default_value_t = 5.0)]
    bright: f64,
    /// Dim phase length in seconds.
    #[arg(long, default_value_t = 5.0)]
    dim: f64,
    /// Where to write the profile.
    #[arg(long, default_value = "profile.json")]
    out: PathBuf,
    /// Give up once the device has been silent this long (wall seconds).
    #[arg(long, default_value_t = 2.0)]
    idle_timeout: f64,
}

pub fn run(_global: &GlobalConfig, args: CalibrateArgs) -> Result<()> {
    if !(args.bright > 0.0 && args.dim > 0.0) {
        bail!("phase lengths must be positive");
    }
    let settings = CalibrationSettings {
        bright_s: args.bright,
        dim_s: args.dim,
        ..Default::default()
    };
    let handle = connect(&args.device)?;
    let acq = Acquisition {
        idle_timeout: Duration::from_secs_f64(args.idle_timeout.max(0.05)),
        connect_timeout: Duration::from_secs(10),
        max_duration_us: None,
    };

    let mut stage = FrameStage::default();
    let mut calibrator: Option<Calibrator> = None;
    let mut last_phase = None;
    let mut done = false;
    let result = acquire(&handle, &acq, |s| {
        let cal = calibrator.get_or_insert_with(|| Calibrator::starting_at(settings, s.ts));
        let Some(f) = stage.push(s) else {
            return Ok(true);
        };
        let phase = cal.push(f);
        if last_phase != Some(phase) {
            match phase {
                Phase::Bright => eprintln!("bright phase: {} s, look at the bright screen", args.bright),
                Phase::Dim => eprintln!("dim phase: {} s, look at the dark screen", args.dim),
                Phase::Done => {}
            }
            last_phase = Some(phase);
        }
        done = phase == Phase::Done;
        Ok(!done)
    });
    let stopped = handle.stop();
    result?;
    stopped?;

    let Some(cal) = calibrator else {
        bail!("no samples received");
    };
    if !done {
        tracing::warn!("stream ended before the dim phase completed");
    }
    let samples = cal.finish()?;
    let profile = compute_profile(&samples.bright, &samples.dim, samples.end_ts)?;
    crate::write_json(&args.out, &profile)?;
    println!(
        "d_min {:.3} mm  d_max {:.3} mm  ({} bright / {} dim frames) -> {}",
        profile.d_min,
        profile.d_max,
        profile.sample_counts.bright,
        profile.sample_counts.dim,
        args.out.display()
    );
    Ok(())
}
