use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use gazeload_core::session::{extract_event_trace, load_session, write_trace_csv, TraceSource};

use crate::GlobalConfig;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Source {
    Samples,
    Estimates,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    session: PathBuf,
    /// Event label to align on.
    #[arg(long)]
    event: String,
    /// Half-width of the window around each event, in seconds.
    #[arg(long, default_value_t = 5.0)]
    window: f64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which series to extract.
    #[arg(long, value_enum, default_value_t = Source::Samples)]
    source: Source,
}

pub fn run(_global: &GlobalConfig, args: TraceArgs) -> Result<()> {
    if !(args.window > 0.0) {
        bail!("--window must be positive");
    }
    let session = load_session(&args.session)
        .with_context(|| format!("loading {}", args.session.display()))?;
    let source = match args.source {
        Source::Samples => TraceSource::Samples,
        Source::Estimates => TraceSource::Estimates,
    };
    let groups = extract_event_trace(&session, &args.event, args.window, source);
    if groups.is_empty() {
        tracing::warn!(label = %args.event, "no matching events");
    }
    match &args.out {
        Some(path) => {
            crate::create_parent(path)?;
            let mut w = BufWriter::new(std::fs::File::create(path)?);
            write_trace_csv(&groups, &mut w)?;
            w.flush()?;
        }
        None => write_trace_csv(&groups, std::io::stdout().lock())?,
    }
    eprintln!("{} events, {} rows", groups.len(), groups.iter().map(|g| g.rows.len()).sum::<usize>());
    Ok(())
}
