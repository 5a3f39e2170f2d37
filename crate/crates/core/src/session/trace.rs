//! Event-aligned trace extraction and CSV export.

use std::io::{self, Write};

use super::Session;
use crate::US_PER_S;

pub const ESTIMATES_CSV_HEADER: &str = "ts_us,running_avg_mm,windowed_avg_mm,running_max_mm,high_load";
pub const TRACE_CSV_HEADER: &str = "event_index,event_ts_us,t_rel_s,value_mm";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSource {
    /// Eye-merged diameters.
    Samples,
    /// Windowed averages of emitted estimates.
    Estimates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// Seconds relative to the event, exactly `(ts - event_ts) / 1e6`.
    pub t_rel: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceGroup {
    pub event_ts: i64,
    pub rows: Vec<TraceRow>,
}

/// One group per event labelled `label`, holding every value within
/// `±window_s` of it. No resampling is done.
pub fn extract_event_trace(
    session: &Session,
    label: &str,
    window_s: f64,
    source: TraceSource,
) -> Vec<TraceGroup> {
    let series: Vec<(i64, f64)> = match source {
        TraceSource::Samples => session.samples().map(|s| (s.ts, s.diameter)).collect(),
        TraceSource::Estimates => session
            .estimates()
            .map(|e| (e.ts, e.windowed_avg))
            .collect(),
    };
    let half = (window_s * US_PER_S).round() as i64;
    session
        .events()
        .filter(|e| e.label == label)
        .map(|ev| {
            // Series timestamps are non-decreasing.
            let lo = series.partition_point(|(ts, _)| *ts < ev.ts - half);
            let rows = series[lo..]
                .iter()
                .take_while(|(ts, _)| *ts <= ev.ts + half)
                .map(|(ts, v)| TraceRow {
                    t_rel: (ts - ev.ts) as f64 / US_PER_S,
                    value: *v,
                })
                .collect();
            TraceGroup {
                event_ts: ev.ts,
                rows,
            }
        })
        .collect()
}

pub fn write_trace_csv(groups: &[TraceGroup], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for (i, g) in groups.iter().enumerate() {
        for r in &g.rows {
            writeln!(out, "{},{},{},{}", i, g.event_ts, r.t_rel, r.value)?;
        }
    }
    out.flush()
}

pub fn write_estimates_csv(session: &Session, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{ESTIMATES_CSV_HEADER}")?;
    for e in session.estimates() {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.ts, e.running_avg, e.windowed_avg, e.running_max, e.high_load
        )?;
    }
    out.flush()
}
