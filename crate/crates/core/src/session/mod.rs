//! Append-only JSONL session logs.
//!
//! A session file is one JSON object per line, tagged by `"record"`:
//!
//! ```text
//! {"record":"header","session_id":..,"start_ts":..,"config":{..},"profile":{..}|null,"tags":{..}}
//! {"record":"sample","ts":..,"diameter":..}
//! {"record":"estimate","ts":..,"running_avg":..,"windowed_avg":..,"running_max":..,"high_load":..,"frames_seen":..}
//! {"record":"event","label":..,"ts":..}
//! {"record":"footer","end_ts":..,"frame_total":..,"estimate_total":..}
//! ```
//!
//! Exactly one header comes first and one footer last; within each record
//! kind timestamps never decrease.

mod trace;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::estimator::{FrameSample, LoadEstimate};

pub use trace::{
    extract_event_trace, write_estimates_csv, write_trace_csv, TraceGroup, TraceRow, TraceSource,
    ESTIMATES_CSV_HEADER,
};

/// Labels with a documented meaning. Any non-empty label is accepted.
pub const KNOWN_LABELS: &[&str] = &[
    "robot_speech_start",
    "robot_speech_end",
    "question_asked",
    "pair_found",
    "session_start",
    "session_end",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub start_ts: i64,
    pub config: serde_json::Value,
    pub profile: Option<CalibrationProfile>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMarker {
    pub label: String,
    pub ts: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFooter {
    pub end_ts: i64,
    pub frame_total: u64,
    pub estimate_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum SessionRecord {
    Header(SessionHeader),
    Sample(FrameSample),
    Estimate(LoadEstimate),
    Event(EventMarker),
    Footer(SessionFooter),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Sample,
    Estimate,
    Event,
}

impl SessionRecord {
    fn timed(&self) -> Option<(Kind, i64)> {
        match self {
            SessionRecord::Sample(s) => Some((Kind::Sample, s.ts)),
            SessionRecord::Estimate(e) => Some((Kind::Estimate, e.ts)),
            SessionRecord::Event(e) => Some((Kind::Event, e.ts)),
            _ => None,
        }
    }
}

/// Last timestamp per record kind.
#[derive(Debug, Clone, Default)]
struct Monotonic {
    last: [Option<i64>; 3],
}

impl Monotonic {
    fn accept(&mut self, kind: Kind, ts: i64) -> bool {
        let slot = &mut self.last[kind as usize];
        if slot.is_some_and(|prev| ts < prev) {
            return false;
        }
        *slot = Some(ts);
        true
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session i/o: {0}")]
    Io(#[from] io::Error),
    #[error("record order: {0}")]
    Ordering(&'static str),
}

/// Writes records as JSONL, flushing after every line.
pub struct SessionWriter<W: Write = File> {
    out: W,
    header_written: bool,
    footer_written: bool,
    order: Monotonic,
    frames: u64,
    estimates: u64,
    last_ts: Option<i64>,
}

impl SessionWriter<File> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self::new(File::create(path)?))
    }
}

impl<W: Write> SessionWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            header_written: false,
            footer_written: false,
            order: Monotonic::default(),
            frames: 0,
            estimates: 0,
            last_ts: None,
        }
    }

    pub fn frame_total(&self) -> u64 {
        self.frames
    }

    pub fn estimate_total(&self) -> u64 {
        self.estimates
    }

    pub fn header_written(&self) -> bool {
        self.header_written
    }

    /// Latest timestamp of any sample/estimate/event written so far.
    pub fn last_ts(&self) -> Option<i64> {
        self.last_ts
    }

    pub fn append(&mut self, r: &SessionRecord) -> Result<(), SessionError> {
        if self.footer_written {
            return Err(SessionError::Ordering("record after footer"));
        }
        match r {
            SessionRecord::Header(_) if self.header_written => {
                return Err(SessionError::Ordering("second header"))
            }
            SessionRecord::Header(_) => {}
            _ if !self.header_written => {
                return Err(SessionError::Ordering("header must come first"))
            }
            _ => {}
        }
        if let Some((kind, ts)) = r.timed() {
            if !self.order.accept(kind, ts) {
                return Err(SessionError::Ordering("timestamp went backwards"));
            }
            self.last_ts = Some(self.last_ts.map_or(ts, |l| l.max(ts)));
        }
        let mut line = serde_json::to_vec(r).map_err(io::Error::from)?;
        line.push(b'\n');
        self.out.write_all(&line)?;
        self.out.flush()?;
        match r {
            SessionRecord::Header(_) => self.header_written = true,
            SessionRecord::Sample(_) => self.frames += 1,
            SessionRecord::Estimate(_) => self.estimates += 1,
            SessionRecord::Footer(_) => self.footer_written = true,
            SessionRecord::Event(_) => {}
        }
        Ok(())
    }

    /// Writes the footer from the running totals.
    pub fn finish(&mut self, end_ts: i64) -> Result<SessionFooter, SessionError> {
        let footer = SessionFooter {
            end_ts,
            frame_total: self.frames,
            estimate_total: self.estimates,
        };
        self.append(&SessionRecord::Footer(footer))?;
        Ok(footer)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatReason {
    BadJson(String),
    MissingHeader,
    DuplicateHeader,
    MissingFooter,
    RecordAfterFooter,
    NonmonotonicTs,
}

impl std::fmt::Display for FormatReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatReason::BadJson(e) => write!(f, "bad_json ({e})"),
            FormatReason::MissingHeader => f.write_str("missing_header"),
            FormatReason::DuplicateHeader => f.write_str("duplicate_header"),
            FormatReason::MissingFooter => f.write_str("missing_footer"),
            FormatReason::RecordAfterFooter => f.write_str("record_after_footer"),
            FormatReason::NonmonotonicTs => f.write_str("nonmonotonic_ts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: FormatReason },
    #[error("cannot read session: {0}")]
    Io(String),
}

impl FormatError {
    pub fn reason(&self) -> Option<&FormatReason> {
        match self {
            FormatError::Invalid { reason, .. } => Some(reason),
            FormatError::Io(_) => None,
        }
    }
}

/// A fully loaded, validated session.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    records: Vec<SessionRecord>,
}

impl Session {
    /// Validates framing and ordering of an in-memory record list.
    pub fn from_records(records: Vec<SessionRecord>) -> Result<Self, FormatError> {
        let invalid = |line, reason| FormatError::Invalid { line, reason };
        let mut order = Monotonic::default();
        let mut footer_seen = false;
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            if footer_seen {
                return Err(invalid(line, FormatReason::RecordAfterFooter));
            }
            match r {
                SessionRecord::Header(_) if i > 0 => {
                    return Err(invalid(line, FormatReason::DuplicateHeader))
                }
                SessionRecord::Header(_) => {}
                _ if i == 0 => return Err(invalid(line, FormatReason::MissingHeader)),
                SessionRecord::Footer(_) => footer_seen = true,
                _ => {}
            }
            if let Some((kind, ts)) = r.timed() {
                if !order.accept(kind, ts) {
                    return Err(invalid(line, FormatReason::NonmonotonicTs));
                }
            }
        }
        if records.is_empty() {
            return Err(invalid(1, FormatReason::MissingHeader));
        }
        if !footer_seen {
            return Err(invalid(records.len() + 1, FormatReason::MissingFooter));
        }
        Ok(Self { records })
    }

    pub fn read(reader: impl BufRead) -> Result<Self, FormatError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| FormatError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SessionRecord =
                serde_json::from_str(&line).map_err(|e| FormatError::Invalid {
                    line: i + 1,
                    reason: FormatReason::BadJson(e.to_string()),
                })?;
            records.push(r);
        }
        Self::from_records(records)
    }

    pub fn records(&self) -> &[SessionRecord] {
        &self.records
    }

    pub fn header(&self) -> &SessionHeader {
        match &self.records[0] {
            SessionRecord::Header(h) => h,
            _ => unreachable!("validated on construction"),
        }
    }

    pub fn footer(&self) -> &SessionFooter {
        match self.records.last() {
            Some(SessionRecord::Footer(f)) => f,
            _ => unreachable!("validated on construction"),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &FrameSample> {
        self.records.iter().filter_map(|r| match r {
            SessionRecord::Sample(s) => Some(s),
            _ => None,
        })
    }

    pub fn estimates(&self) -> impl Iterator<Item = &LoadEstimate> {
        self.records.iter().filter_map(|r| match r {
            SessionRecord::Estimate(e) => Some(e),
            _ => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &EventMarker> {
        self.records.iter().filter_map(|r| match r {
            SessionRecord::Event(e) => Some(e),
            _ => None,
        })
    }
}

pub fn load_session(path: &Path) -> Result<Session, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::Io(format!("{}: {e}", path.display())))?;
    Session::read(BufReader::new(file))
}
