//! Offline evaluation: load peaks, per-session features, correlations.

mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::estimator::LoadEstimate;
use crate::session::Session;
use crate::US_PER_S;

pub use stats::{
    ln_gamma, p_value, pearson_r, reg_incomplete_beta, student_t_two_tailed, CorrelationResult,
    StatsError,
};

/// A peak must span at least this many estimates.
pub const MIN_PEAK_LEN: usize = 3;
/// This many consecutive low estimates end a peak; shorter dips are bridged.
pub const PEAK_GAP: usize = 2;

/// Counts debounced high-load episodes.
///
/// Runs of `true` separated by a single `false` belong to the same episode;
/// two or more consecutive `false` values separate episodes. An episode
/// counts when it spans at least [`MIN_PEAK_LEN`] estimates from its first
/// to its last `true`.
pub fn count_peak_flags(flags: &[bool]) -> usize {
    let mut peaks = 0;
    let mut episode: Option<(usize, usize)> = None;
    let mut lows = 0;
    for (i, &high) in flags.iter().enumerate() {
        if high {
            episode = Some(episode.map_or((i, i), |(start, _)| (start, i)));
            lows = 0;
        } else if let Some((start, end)) = episode {
            lows += 1;
            if lows >= PEAK_GAP {
                peaks += usize::from(end - start + 1 >= MIN_PEAK_LEN);
                episode = None;
            }
        }
    }
    if let Some((start, end)) = episode {
        peaks += usize::from(end - start + 1 >= MIN_PEAK_LEN);
    }
    peaks
}

pub fn count_peaks(estimates: &[LoadEstimate]) -> usize {
    let flags: Vec<bool> = estimates.iter().map(|e| e.high_load).collect();
    count_peak_flags(&flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub session_id: String,
    pub peak_count: u64,
    /// Seconds from header `start_ts` to footer `end_ts`.
    pub duration: f64,
    pub event_counts: BTreeMap<String, u64>,
    pub tags: BTreeMap<String, String>,
}

impl SessionFeatures {
    pub fn from_session(session: &Session) -> Self {
        let header = session.header();
        let estimates: Vec<LoadEstimate> = session.estimates().copied().collect();
        let mut event_counts = BTreeMap::new();
        for e in session.events() {
            *event_counts.entry(e.label.clone()).or_insert(0) += 1;
        }
        Self {
            session_id: header.session_id.clone(),
            peak_count: count_peaks(&estimates) as u64,
            duration: (session.footer().end_ts - header.start_ts) as f64 / US_PER_S,
            event_counts,
            tags: header.tags.clone(),
        }
    }
}

/// A per-session quantity that can be correlated.
///
/// Textual names: `peaks`, `duration`, `events.<label>` and `tag.<name>`.
/// Tags are categorical and need an explicit value → number mapping.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Peaks,
    Duration,
    EventCount(String),
    Tag {
        name: String,
        mapping: BTreeMap<String, f64>,
    },
}

impl Feature {
    /// Parses a feature name. `mappings` maps tag names to their encodings.
    pub fn parse(
        name: &str,
        mappings: &BTreeMap<String, BTreeMap<String, f64>>,
    ) -> Result<Self, StatsError> {
        match name {
            "peaks" => Ok(Feature::Peaks),
            "duration" => Ok(Feature::Duration),
            _ => {
                if let Some(label) = name.strip_prefix("events.").filter(|l| !l.is_empty()) {
                    Ok(Feature::EventCount(label.to_string()))
                } else if let Some(tag) = name.strip_prefix("tag.").filter(|t| !t.is_empty()) {
                    let mapping = mappings
                        .get(tag)
                        .cloned()
                        .ok_or_else(|| StatsError::UnknownFeature(format!("{name} (no mapping)")))?;
                    Ok(Feature::Tag {
                        name: tag.to_string(),
                        mapping,
                    })
                } else {
                    Err(StatsError::UnknownFeature(name.to_string()))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Feature::Peaks => "peaks".into(),
            Feature::Duration => "duration".into(),
            Feature::EventCount(l) => format!("events.{l}"),
            Feature::Tag { name, .. } => format!("tag.{name}"),
        }
    }

    /// `Ok(None)` means the value is missing for this session.
    pub fn value(&self, f: &SessionFeatures) -> Result<Option<f64>, StatsError> {
        Ok(match self {
            Feature::Peaks => Some(f.peak_count as f64),
            Feature::Duration => Some(f.duration),
            Feature::EventCount(label) => Some(f.event_counts.get(label).copied().unwrap_or(0) as f64),
            Feature::Tag { name, mapping } => match f.tags.get(name) {
                None => None,
                Some(v) => Some(*mapping.get(v).ok_or_else(|| StatsError::UnmappedTag {
                    tag: name.clone(),
                    value: v.clone(),
                })?),
            },
        })
    }
}

/// Correlates two features across sessions, dropping any session where
/// either value is missing.
pub fn correlate_features(
    table: &[SessionFeatures],
    x: &Feature,
    y: &Feature,
) -> Result<CorrelationResult, StatsError> {
    let mut xs = Vec::with_capacity(table.len());
    let mut ys = Vec::with_capacity(table.len());
    for f in table {
        if let (Some(a), Some(b)) = (x.value(f)?, y.value(f)?) {
            xs.push(a);
            ys.push(b);
        }
    }
    let r = pearson_r(&xs, &ys)?;
    Ok(CorrelationResult {
        r,
        n: xs.len(),
        p_two_tailed: p_value(r, xs.len())?,
    })
}
