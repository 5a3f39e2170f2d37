use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::Args;
use gazeload_core::pipeline::{Pipeline, PipelineConfig, PipelineEvent};
use gazeload_core::session::{load_session, write_estimates_csv, SessionRecord, SessionWriter};
use gazeload_core::US_PER_S;

use crate::readout::Readout;
use crate::GlobalConfig;

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Session log to replay.
    #[arg(long)]
    session: PathBuf,
    /// Playback speed relative to real time; ignored with --fast.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Print event markers as they are reached.
    #[arg(long)]
    markers: bool,
    /// Write a new session log with the recomputed estimates.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the recomputed estimates as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Suppress the readout.
    #[arg(long)]
    quiet: bool,
}

/// Estimates are recomputed from the stored samples with the stored profile
/// and the current --emit-rate/--threshold.
pub fn run(global: &GlobalConfig, args: ReplayArgs) -> Result<()> {
    if !(args.speed > 0.0) {
        bail!("--speed must be positive");
    }
    let session = load_session(&args.session)
        .with_context(|| format!("loading {}", args.session.display()))?;
    let header = session.header().clone();
    let config = PipelineConfig {
        emit_rate_hz: global.emit_rate_hz,
        threshold_fraction: global.threshold_fraction,
        profile: header.profile,
        emit: true,
    };
    let mut pipeline = Pipeline::new(config)?;
    let mut out: Vec<SessionRecord> = Vec::new();
    let mut events = session.events().cloned().peekable();
    let mut readout = Readout::new(!args.quiet);
    let started = Instant::now();
    let pace = !global.fast();

    let mut emit = |e: PipelineEvent, out: &mut Vec<SessionRecord>| {
        let ts = match e {
            PipelineEvent::Frame(f) => f.ts,
            PipelineEvent::Estimate(e) => e.ts,
        };
        if pace {
            let due = (ts - header.start_ts) as f64 / US_PER_S / args.speed;
            let elapsed = started.elapsed().as_secs_f64();
            if due > elapsed {
                std::thread::sleep(Duration::from_secs_f64(due - elapsed));
            }
        }
        while let Some(m) = events.next_if(|m| m.ts <= ts) {
            if args.markers {
                println!("{:>11.3}s  event {}", (m.ts - header.start_ts) as f64 / US_PER_S, m.label);
            }
            out.push(SessionRecord::Event(m));
        }
        match e {
            PipelineEvent::Frame(f) => out.push(SessionRecord::Sample(f)),
            PipelineEvent::Estimate(e) => {
                readout.show(&e);
                out.push(SessionRecord::Estimate(e));
            }
        }
    };
    for f in session.samples() {
        let mut batch = Vec::with_capacity(4);
        pipeline.push_frame(*f, &mut |e| batch.push(e));
        for e in batch {
            emit(e, &mut out);
        }
    }
    let mut batch = Vec::new();
    pipeline.finish(&mut |e| batch.push(e));
    for e in batch {
        emit(e, &mut out);
    }
    let end_ts = session.footer().end_ts;
    out.extend(events.filter(|m| m.ts <= end_ts).map(SessionRecord::Event));

    let estimate_total = pipeline.emitted();
    if let Some(path) = &args.out {
        crate::create_parent(path)?;
        let mut writer = SessionWriter::create(path)?;
        writer.append(&SessionRecord::Header(header.clone()))?;
        for r in &out {
            writer.append(r)?;
        }
        writer.finish(end_ts)?;
    }
    if let Some(path) = &args.csv {
        crate::create_parent(path)?;
        let mut records = vec![SessionRecord::Header(header.clone())];
        records.extend(out.iter().cloned());
        records.push(SessionRecord::Footer(session.footer().clone()));
        let replayed = gazeload_core::session::Session::from_records(records)?;
        let file = std::fs::File::create(path)?;
        write_estimates_csv(&replayed, std::io::BufWriter::new(file))?;
    }
    let stored = session.estimates().count();
    eprintln!(
        "replayed {} frames: {} estimates ({} stored)",
        session.samples().count(),
        estimate_total,
        stored
    );
    Ok(())
}
