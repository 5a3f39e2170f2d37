use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use gazeload_core::analysis::{correlate_features, Feature, SessionFeatures};
use gazeload_core::session::load_session;
use serde::Serialize;

use crate::GlobalConfig;

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory of session logs (*.jsonl).
    #[arg(long)]
    sessions: PathBuf,
    /// First feature: peaks, duration, events.<label> or tag.<name>.
    #[arg(long)]
    x: String,
    /// Second feature.
    #[arg(long)]
    y: String,
    /// Numeric encoding for a tag, e.g. `condition=easy:0,hard:1` (repeatable).
    #[arg(long = "map")]
    maps: Vec<String>,
    /// JSON report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Report {
    x: String,
    y: String,
    r: f64,
    n: usize,
    p_two_tailed: f64,
    features: Vec<SessionFeatures>,
}

fn parse_map(spec: &str) -> Result<(String, BTreeMap<String, f64>)> {
    let Some((tag, pairs)) = spec.split_once('=') else {
        bail!("expected tag=value:number,..., got {spec:?}");
    };
    let mut mapping = BTreeMap::new();
    for pair in pairs.split(',').filter(|p| !p.is_empty()) {
        let Some((value, num)) = pair.rsplit_once(':') else {
            bail!("expected value:number in {spec:?}");
        };
        let num: f64 = num
            .parse()
            .with_context(|| format!("bad number in {spec:?}"))?;
        mapping.insert(value.to_string(), num);
    }
    if tag.is_empty() || mapping.is_empty() {
        bail!("empty mapping {spec:?}");
    }
    Ok((tag.to_string(), mapping))
}

pub fn run(_global: &GlobalConfig, args: AnalyzeArgs) -> Result<()> {
    let mappings = args
        .maps
        .iter()
        .map(|m| parse_map(m))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let x = Feature::parse(&args.x, &mappings)?;
    let y = Feature::parse(&args.y, &mappings)?;

    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.sessions)
        .with_context(|| format!("reading {}", args.sessions.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .jsonl sessions in {}", args.sessions.display());
    }
    let mut features = Vec::with_capacity(paths.len());
    for p in &paths {
        let session = load_session(p).with_context(|| format!("loading {}", p.display()))?;
        features.push(SessionFeatures::from_session(&session));
    }
    let result = correlate_features(&features, &x, &y)?;
    let report = Report {
        x: x.name(),
        y: y.name(),
        r: result.r,
        n: result.n,
        p_two_tailed: result.p_two_tailed,
        features,
    };
    match &args.out {
        Some(path) => crate::write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    eprintln!(
        "{} vs {}: r = {:.4}, n = {}, p = {:.4e}",
        report.x, report.y, report.r, report.n, report.p_two_tailed
    );
    Ok(())
}
