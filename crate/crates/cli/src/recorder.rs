//! Turns pipeline output into a session log, injecting event markers as
//! device time passes them.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use gazeload_core::calibration::CalibrationProfile;
use gazeload_core::pipeline::PipelineEvent;
use gazeload_core::session::{EventMarker, SessionFooter, SessionHeader, SessionRecord, SessionWriter};
use gazeload_core::simulator::MarkerSpec;

use crate::readout::Readout;

pub struct HeaderInfo {
    pub session_id: String,
    pub config: serde_json::Value,
    pub profile: Option<CalibrationProfile>,
    pub tags: BTreeMap<String, String>,
}

pub struct Recorder {
    writer: SessionWriter<File>,
    header: Option<HeaderInfo>,
    markers: VecDeque<EventMarker>,
    readout: Readout,
}

pub fn markers_from_specs(specs: &[MarkerSpec]) -> Vec<EventMarker> {
    let mut m: Vec<EventMarker> = specs
        .iter()
        .map(|s| EventMarker {
            label: s.label.clone(),
            ts: (s.t * 1e6).round() as i64,
        })
        .collect();
    m.sort_by_key(|e| e.ts);
    m
}

pub fn session_id(fixed: Option<&str>) -> String {
    match fixed {
        Some(id) => id.to_string(),
        None => {
            let ms = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or_default();
            format!("session-{ms}")
        }
    }
}

impl Recorder {
    pub fn create(
        path: &Path,
        header: HeaderInfo,
        markers: Vec<EventMarker>,
        readout: Readout,
    ) -> Result<Self> {
        crate::create_parent(path)?;
        let writer = SessionWriter::create(path)
            .with_context(|| format!("creating session {}", path.display()))?;
        Ok(Self {
            writer,
            header: Some(header),
            markers: markers.into(),
            readout,
        })
    }

    pub fn set_profile(&mut self, profile: Option<CalibrationProfile>) {
        if let Some(h) = self.header.as_mut() {
            h.profile = profile;
        }
    }

    /// The header, until the first record is written.
    pub fn pending_header(&mut self) -> Option<&mut HeaderInfo> {
        self.header.as_mut()
    }

    fn ensure_header(&mut self, start_ts: i64) -> Result<()> {
        if let Some(h) = self.header.take() {
            self.writer.append(&SessionRecord::Header(SessionHeader {
                session_id: h.session_id,
                start_ts,
                config: h.config,
                profile: h.profile,
                tags: h.tags,
            }))?;
        }
        Ok(())
    }

    fn inject_markers(&mut self, upto: i64) -> Result<()> {
        while self.markers.front().is_some_and(|m| m.ts <= upto) {
            let m = self.markers.pop_front().expect("checked");
            self.writer.append(&SessionRecord::Event(m))?;
        }
        Ok(())
    }

    pub fn on_event(&mut self, e: PipelineEvent) -> Result<()> {
        let ts = match e {
            PipelineEvent::Frame(f) => f.ts,
            PipelineEvent::Estimate(e) => e.ts,
        };
        self.ensure_header(ts)?;
        self.inject_markers(ts)?;
        let record = match e {
            PipelineEvent::Frame(f) => SessionRecord::Sample(f),
            PipelineEvent::Estimate(e) => {
                self.readout.show(&e);
                SessionRecord::Estimate(e)
            }
        };
        self.writer.append(&record)?;
        Ok(())
    }

    /// Records a marker at the latest device time seen so far.
    pub fn mark_now(&mut self, label: &str) -> Result<()> {
        let Some(ts) = self.writer.last_ts() else {
            tracing::warn!(label, "ignoring marker before the first frame");
            return Ok(());
        };
        self.writer.append(&SessionRecord::Event(EventMarker {
            label: label.to_string(),
            ts,
        }))?;
        Ok(())
    }

    /// Writes the footer. Markers past the last frame are dropped.
    pub fn finish(mut self) -> Result<SessionFooter> {
        let end = self
            .writer
            .last_ts()
            .context("no valid frames were recorded")?;
        self.inject_markers(end)?;
        if !self.markers.is_empty() {
            tracing::info!(dropped = self.markers.len(), "markers after session end");
        }
        Ok(self.writer.finish(end)?)
    }
}
