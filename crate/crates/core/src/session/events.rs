use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CreateLabel,
    AssignLabel,
    Skip,
    Relabel,
    /// An sLDA refresh was started from the current predictions.
    RetrainScheduled,
    /// The refreshed topic model replaced the previous one.
    RetrainInstalled,
    FeaturesRebuilt,
    ClassifierReinit,
}

impl EventKind {
    /// Events that come from the annotator rather than the engine.
    pub fn is_user(self) -> bool {
        matches!(
            self,
            Self::CreateLabel | Self::AssignLabel | Self::Skip | Self::Relabel
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Retrain round for the retrain events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u64>,
    pub wall_time: DateTime<Utc>,
}

impl AnnotationEvent {
    /// Same event ignoring the timestamp.
    pub(crate) fn same_action(&self, other: &Self) -> bool {
        self.seq == other.seq
            && self.kind == other.kind
            && self.doc_id == other.doc_id
            && self.label == other.label
            && self.round == other.round
    }
}

/// Checks that sequence numbers run 1, 2, 3, ... with no gaps.
pub fn check_gapless(events: &[AnnotationEvent]) -> Result<(), SessionError> {
    for (i, e) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        if e.seq != expected {
            return Err(SessionError::LogGap { expected, found: e.seq });
        }
    }
    Ok(())
}

pub fn read_event_log(path: &Path) -> Result<Vec<AnnotationEvent>, SessionError> {
    let file = File::open(path)?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| SessionError::CorruptLog {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_event_log(path: &Path, events: &[AnnotationEvent]) -> Result<(), SessionError> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Append-only JSONL sink, flushed after every event.
#[derive(Debug)]
pub struct EventLogWriter {
    out: BufWriter<File>,
}

impl EventLogWriter {
    pub fn open(path: &Path) -> Result<Self, SessionError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, event: &AnnotationEvent) -> Result<(), SessionError> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
