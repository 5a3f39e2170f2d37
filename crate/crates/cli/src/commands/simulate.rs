use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Args;
use gazeload_core::simulator::{run_server, ScenarioConfig, ServerOptions};

use crate::GlobalConfig;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:4999")]
    bind: String,
    /// Scenario JSON; defaults to a 60 s resting baseline.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds per wall second with --fast.
    #[arg(long, default_value_t = 100.0)]
    speedup: f64,
    /// Stop after this many seconds without keepalives.
    #[arg(long, default_value_t = 5.0)]
    keepalive_timeout: f64,
}

pub fn run(global: &GlobalConfig, args: SimulateArgs) -> Result<()> {
    let mut config = match &args.scenario {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let options = ServerOptions {
        fast: global.fast(),
        speedup: args.speedup,
        keepalive_timeout: Duration::from_secs_f64(args.keepalive_timeout.max(0.001)),
    };
    let duration = config.duration;
    let server = run_server(config, &args.bind, options)
        .with_context(|| format!("binding {}", args.bind))?;
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "listening on {}", server.local_addr())?;
        out.flush()?;
    }
    tracing::info!(duration, "waiting for a subscriber");
    let report = server.join()?;
    eprintln!(
        "simulator stopped ({:?}) after {} sample datagrams",
        report.reason, report.samples_sent
    );
    Ok(())
}
