//! Append-only JSONL event log and the clock that stamps it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{ConsensusRecord, PromptVersion, VersionId};
use crate::model::{CategoryLabel, DocBundle, FieldValue, RoutingDecision};
use crate::parse::{ParsedDoc, ParserConfig};
use crate::pftfi::{CorrectionFeedback, ErrorPattern};
use crate::split::LogicalUnit;
use crate::validate::ValidationReport;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("event log {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock advancing by a fixed step on every reading.
pub struct SteppingClock {
    next_ms: AtomicI64,
    step_ms: i64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        SteppingClock {
            next_ms: AtomicI64::new(start.timestamp_millis()),
            step_ms: step.num_milliseconds(),
        }
    }

    /// Starts at 2026-01-01T00:00:00Z, one second per reading.
    pub fn fixed() -> Self {
        let start = DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc);
        Self::new(start, Duration::seconds(1))
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let ms = self.next_ms.fetch_add(self.step_ms, Ordering::SeqCst);
        DateTime::from_timestamp_millis(ms).unwrap_or(DateTime::UNIX_EPOCH)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Confirmed,
    Corrected,
    Inherited,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_kind", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    Ingested {
        bundle: DocBundle,
    },
    Classified {
        label: CategoryLabel,
        page_labels: Vec<CategoryLabel>,
    },
    /// More than one unit creates one child document per unit.
    Split {
        units: Vec<LogicalUnit>,
        ambiguous: bool,
    },
    Parsed {
        parsed: ParsedDoc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        external_fallback: Option<String>,
    },
    Extracted {
        prompt_version: VersionId,
        records: Vec<ConsensusRecord>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        failed_backends: Vec<String>,
    },
    ExtractionFailed {
        reason: String,
    },
    Validated {
        report: ValidationReport,
    },
    Routed {
        decision: RoutingDecision,
        /// Fields named by failing checks, consensus splits or low confidence.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        flagged_fields: Vec<String>,
    },
    Fallback {
        reason: String,
    },
    FeedbackRecorded {
        feedback: CorrectionFeedback,
        pattern: ErrorPattern,
    },
    Corrected {
        feedback_id: String,
        value: FieldValue,
    },
    PromptCommitted {
        version: PromptVersion,
    },
    ParserConfigCommitted {
        config: ParserConfig,
    },
    Inherited {
        feedback_id: String,
        source_doc: String,
        field: String,
        version: VersionId,
        round: u32,
    },
    Reextracted {
        field: String,
        prompt_version: VersionId,
        record: ConsensusRecord,
        round: u32,
    },
    Confirmed {
        reviewer_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        review_seconds: Option<f64>,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::Ingested { .. } => "ingested",
            EventPayload::Classified { .. } => "classified",
            EventPayload::Split { .. } => "split",
            EventPayload::Parsed { .. } => "parsed",
            EventPayload::Extracted { .. } => "extracted",
            EventPayload::ExtractionFailed { .. } => "extraction_failed",
            EventPayload::Validated { .. } => "validated",
            EventPayload::Routed { .. } => "routed",
            EventPayload::Fallback { .. } => "fallback",
            EventPayload::FeedbackRecorded { .. } => "feedback_recorded",
            EventPayload::Corrected { .. } => "corrected",
            EventPayload::PromptCommitted { .. } => "prompt_committed",
            EventPayload::ParserConfigCommitted { .. } => "parser_config_committed",
            EventPayload::Inherited { .. } => "inherited",
            EventPayload::Reextracted { .. } => "reextracted",
            EventPayload::Confirmed { .. } => "confirmed",
        }
    }
}

/// One log line: `{seq, ts, doc_id, event_kind, payload}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub doc_id: String,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Single-writer log, optionally mirrored to a JSONL file.
pub struct EventLog {
    events: Vec<Event>,
    file: Option<(PathBuf, File)>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog {
            events: Vec::new(),
            file: None,
        }
    }

    /// Opens (or creates) a JSONL log and loads the events already in it.
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let io = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let events = if path.exists() {
            read_events(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        Ok(EventLog {
            events,
            file: Some((path.to_path_buf(), file)),
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    pub fn append(&mut self, event: Event) -> Result<(), LogError> {
        if let Some((path, file)) = &mut self.file {
            let mut line = serde_json::to_string(&event).expect("events serialize");
            line.push('\n');
            file.write_all(line.as_bytes())
                .map_err(|source| LogError::Io {
                    path: path.clone(),
                    source,
                })?;
            file.flush().map_err(|source| LogError::Io {
                path: path.clone(),
                source,
            })?;
        }
        self.events.push(event);
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, LogError> {
    let file = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| LogError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(event);
    }
    Ok(out)
}
