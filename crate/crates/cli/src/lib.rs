//! The `gazeload` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

mod commands;
mod config;
mod readout;
mod recorder;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ClockMode, GlobalConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gazeload", version, about = "Real-time cognitive load from pupil diameter")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run on the simulated/device clock instead of wall time.
    #[arg(long, global = true)]
    fast: bool,
    /// Estimate emission rate in Hz.
    #[arg(long, global = true, default_value_t = gazeload_core::pipeline::DEFAULT_EMIT_RATE_HZ)]
    emit_rate: f64,
    /// Fraction of the running maximum above which load is high.
    #[arg(long, global = true, default_value_t = gazeload_core::estimator::DEFAULT_THRESHOLD_FRACTION)]
    threshold: f64,
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, env = "GAZELOAD_LOG", default_value = "warn")]
    log: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve a synthetic eye tracker over UDP.
    Simulate(commands::simulate::SimulateArgs),
    /// Run the bright/dim light-reflex calibration and save a profile.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Connect to a device, estimate load live and record the session.
    Stream(commands::stream::StreamArgs),
    /// Re-run the estimator over a recorded session.
    Replay(commands::replay::ReplayArgs),
    /// Extract event-aligned traces from a session as CSV.
    Trace(commands::trace::TraceArgs),
    /// Correlate per-session features across a directory of sessions.
    Analyze(commands::analyze::AnalyzeArgs),
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let global = match GlobalConfig::new(
        &cli.global.log,
        cli.global.fast,
        cli.global.emit_rate,
        cli.global.threshold,
    ) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    init_logging(&global.log_level);

    let result = match cli.command {
        Command::Simulate(a) => commands::simulate::run(&global, a),
        Command::Calibrate(a) => commands::calibrate::run(&global, a),
        Command::Stream(a) => commands::stream::run(&global, a),
        Command::Replay(a) => commands::replay::run(&global, a),
        Command::Trace(a) => commands::trace::run(&global, a),
        Command::Analyze(a) => commands::analyze::run(&global, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    // Ignore the error when a subscriber is already installed (repeated in-process runs).
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn create_parent(path: &std::path::Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p),
        _ => Ok(()),
    }
}

fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> anyhow::Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
