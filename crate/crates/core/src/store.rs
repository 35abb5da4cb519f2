//! In-memory state as a pure fold over the event log.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventPayload, Resolution};
use crate::extract::{Agreement, ConsensusRecord, VersionId};
use crate::model::{
    Category, CategoryLabel, DocBundle, DocType, FieldValue, Route, RoutingDecision,
    UNKNOWN_SUPPLIER,
};
use crate::parse::{ParsedDoc, ParserConfig};
use crate::pftfi::{CorrectionFeedback, ErrorPattern, PendingDoc, PftfiError, PromptStore};
use crate::split::LogicalUnit;
use crate::state::{advance_state, PipelineState, StageOutput, StateError};
use crate::validate::ValidationReport;

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("event {seq} out of order (last applied {last})")]
    Sequence { seq: u64, last: u64 },
    #[error("document {0} already exists")]
    Duplicate(String),
    #[error("unknown document {0}")]
    UnknownDoc(String),
    #[error("document {doc_id}: {source}")]
    State { doc_id: String, source: StateError },
    #[error("document {0} is a batch container and is not processed itself")]
    Container(String),
    #[error("document {0} has no open review task")]
    NoOpenTask(String),
    #[error(transparent)]
    Prompt(#[from] PftfiError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    InProgress,
    Resolved,
}

impl std::str::FromStr for TaskStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(TaskStatus::Pending),
            "in_progress" => Ok(TaskStatus::InProgress),
            "resolved" => Ok(TaskStatus::Resolved),
            other => Err(format!("unknown task status {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub status: TaskStatus,
    pub opened_at: DateTime<Utc>,
    pub opened_seq: u64,
    pub resolved_at: Option<DateTime<Utc>>,
    pub review_seconds: Option<f64>,
    pub resolution: Option<Resolution>,
    pub feedback_ids: Vec<String>,
    /// Set by the last correction or re-extraction; decides how an
    /// automatic acceptance closes the task.
    pending_resolution: Option<Resolution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: String,
    pub parent: Option<String>,
    pub children: Vec<String>,
    pub bundle: DocBundle,
    pub state: PipelineState,
    pub ingested_seq: u64,
    pub label: Option<CategoryLabel>,
    pub page_labels: Vec<CategoryLabel>,
    pub units: Vec<LogicalUnit>,
    pub ambiguous_split: bool,
    pub parsed: Option<ParsedDoc>,
    pub parse_fallback: Option<String>,
    pub prompt_version: Option<VersionId>,
    pub records: Vec<ConsensusRecord>,
    pub round: u32,
    pub report: Option<ValidationReport>,
    pub routing: Option<RoutingDecision>,
    pub flagged_fields: Vec<String>,
    pub fallback_reason: Option<String>,
    pub task: Option<TaskState>,
    pub human_actions: u32,
    pub inherited_from: Vec<String>,
}

impl DocRecord {
    pub fn is_container(&self) -> bool {
        !self.children.is_empty()
    }

    /// Category of the head label; unknown labels map to `unknown:other`.
    pub fn category(&self) -> Category {
        self.label
            .as_ref()
            .map(CategoryLabel::category)
            .unwrap_or_else(|| Category::new(UNKNOWN_SUPPLIER, DocType::Other))
    }

    /// Current field values: validated values when present, else the
    /// consensus choices.
    pub fn values(&self) -> Vec<FieldValue> {
        match &self.report {
            Some(r) => r.adjusted.clone(),
            None => self.records.iter().map(|r| r.chosen.clone()).collect(),
        }
    }

    pub fn has_open_task(&self) -> bool {
        self.task
            .as_ref()
            .is_some_and(|t| t.status != TaskStatus::Resolved)
    }

    fn replace_value(&mut self, value: &FieldValue) -> bool {
        let mut found = false;
        for r in self.records.iter_mut().filter(|r| r.field == value.field) {
            r.chosen = value.clone();
            r.flagged = false;
            found = true;
        }
        if let Some(report) = &mut self.report {
            for v in report
                .adjusted
                .iter_mut()
                .filter(|v| v.field == value.field)
            {
                *v = value.clone();
            }
        }
        found
    }
}

/// Review task as served to reviewers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub doc_id: String,
    pub category: Category,
    pub state: PipelineState,
    pub markdown: Option<String>,
    pub extraction: Vec<ConsensusRecord>,
    pub fields: Vec<FieldValue>,
    pub validation: Option<ValidationReport>,
    pub reasons: Vec<String>,
    pub flagged_fields: Vec<String>,
    pub status: TaskStatus,
    pub opened_at: DateTime<Utc>,
    pub resolved_at: Option<DateTime<Utc>>,
    pub review_seconds: Option<f64>,
    pub resolution: Option<Resolution>,
    pub feedback_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub doc_id: String,
    pub category: Category,
    pub status: TaskStatus,
    pub opened_at: DateTime<Utc>,
    pub reasons: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub total_docs: usize,
    pub ai_completed: usize,
    pub fallback_docs: usize,
    pub in_review: usize,
    pub reviewed_docs: usize,
    pub review_rate: Option<f64>,
    pub automation_rate: Option<f64>,
    pub avg_review_seconds: Option<f64>,
}

impl PipelineStats {
    pub fn from_counts(
        total: usize,
        ai_completed: usize,
        fallback: usize,
        reviewed: usize,
    ) -> Self {
        let rate = |n: usize| (total > 0).then(|| n as f64 / total as f64);
        PipelineStats {
            total_docs: total,
            ai_completed,
            fallback_docs: fallback,
            in_review: 0,
            reviewed_docs: reviewed,
            review_rate: rate(reviewed),
            automation_rate: rate(ai_completed),
            avg_review_seconds: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Store {
    docs: BTreeMap<String, DocRecord>,
    order: Vec<String>,
    pub prompts: PromptStore,
    pub parser_config: ParserConfig,
    pub parser_history: Vec<ParserConfig>,
    pub feedback: Vec<(CorrectionFeedback, ErrorPattern)>,
    last_seq: u64,
}

impl Store {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Store, StoreError> {
        let mut store = Store::default();
        for e in events {
            store.apply(e)?;
        }
        Ok(store)
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn doc(&self, doc_id: &str) -> Option<&DocRecord> {
        self.docs.get(doc_id)
    }

    /// Documents in ingest order (children right after their batch).
    pub fn docs(&self) -> impl Iterator<Item = &DocRecord> {
        self.order.iter().filter_map(|id| self.docs.get(id))
    }

    /// Documents that are processed on their own (batch containers excluded).
    pub fn units(&self) -> impl Iterator<Item = &DocRecord> {
        self.docs().filter(|d| !d.is_container())
    }

    fn doc_mut(&mut self, doc_id: &str) -> Result<&mut DocRecord, StoreError> {
        self.docs
            .get_mut(doc_id)
            .ok_or_else(|| StoreError::UnknownDoc(doc_id.to_string()))
    }

    fn transition(&self, doc_id: &str, output: StageOutput) -> Result<PipelineState, StoreError> {
        let doc = self
            .docs
            .get(doc_id)
            .ok_or_else(|| StoreError::UnknownDoc(doc_id.to_string()))?;
        advance_state(doc.state, output).map_err(|source| StoreError::State {
            doc_id: doc_id.to_string(),
            source,
        })
    }

    fn open_task(doc: &mut DocRecord, event: &Event) {
        if !doc.has_open_task() {
            doc.task = Some(TaskState {
                status: TaskStatus::Pending,
                opened_at: event.ts,
                opened_seq: event.seq,
                resolved_at: None,
                review_seconds: None,
                resolution: None,
                feedback_ids: Vec::new(),
                pending_resolution: None,
            });
        }
    }

    fn close_task(
        doc: &mut DocRecord,
        ts: DateTime<Utc>,
        resolution: Resolution,
        seconds: Option<f64>,
    ) {
        if let Some(task) = doc
            .task
            .as_mut()
            .filter(|t| t.status != TaskStatus::Resolved)
        {
            let elapsed = (ts - task.opened_at).num_milliseconds() as f64 / 1000.0;
            task.status = TaskStatus::Resolved;
            task.resolved_at = Some(ts);
            task.review_seconds = Some(seconds.unwrap_or(elapsed).max(0.0));
            task.resolution = Some(resolution);
        }
    }

    /// Applies one event. Everything is checked before any mutation, so a
    /// rejected event leaves the store untouched.
    pub fn apply(&mut self, event: &Event) -> Result<(), StoreError> {
        if event.seq <= self.last_seq {
            return Err(StoreError::Sequence {
                seq: event.seq,
                last: self.last_seq,
            });
        }
        let id = event.doc_id.as_str();
        match &event.payload {
            EventPayload::Ingested { bundle } => {
                if self.docs.contains_key(id) {
                    return Err(StoreError::Duplicate(id.to_string()));
                }
                self.order.push(id.to_string());
                self.docs.insert(
                    id.to_string(),
                    new_record(bundle.clone(), None, PipelineState::Ingested, event.seq),
                );
            }
            EventPayload::Classified { label, page_labels } => {
                let next = self.transition(id, StageOutput::Classifier)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.label = Some(label.clone());
                doc.page_labels = page_labels.clone();
            }
            EventPayload::Split { units, ambiguous } => {
                let next = self.transition(id, StageOutput::Splitter)?;
                if units.len() > 1 {
                    if let Some(dup) = units.iter().find(|u| self.docs.contains_key(&u.unit_id)) {
                        return Err(StoreError::Duplicate(dup.unit_id.clone()));
                    }
                }
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.units = units.clone();
                doc.ambiguous_split = *ambiguous;
                if units.len() > 1 {
                    let parent = doc.clone();
                    let pos = self
                        .order
                        .iter()
                        .position(|d| d == id)
                        .unwrap_or(self.order.len() - 1);
                    for (k, unit) in units.iter().enumerate() {
                        let (start, end) = unit.page_range;
                        let mut child = new_record(
                            parent.bundle.slice(&unit.unit_id, start, end),
                            Some(id.to_string()),
                            PipelineState::Split,
                            event.seq,
                        );
                        child.label = Some(unit.head_label.clone());
                        child.page_labels = parent
                            .page_labels
                            .get(start..=end)
                            .map(<[_]>::to_vec)
                            .unwrap_or_default();
                        self.order.insert(pos + 1 + k, unit.unit_id.clone());
                        self.docs.insert(unit.unit_id.clone(), child);
                    }
                    self.doc_mut(id)?.children = units.iter().map(|u| u.unit_id.clone()).collect();
                }
            }
            EventPayload::Parsed {
                parsed,
                external_fallback,
            } => {
                if self.docs.get(id).is_some_and(DocRecord::is_container) {
                    return Err(StoreError::Container(id.to_string()));
                }
                let next = self.transition(id, StageOutput::Parser)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.parsed = Some(parsed.clone());
                doc.parse_fallback = external_fallback.clone();
            }
            EventPayload::Extracted {
                prompt_version,
                records,
                ..
            } => {
                let next = self.transition(id, StageOutput::Extractor)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.prompt_version = Some(*prompt_version);
                doc.records = records.clone();
                doc.report = None;
            }
            EventPayload::ExtractionFailed { reason } => {
                let next = self.transition(id, StageOutput::Escalation)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.routing = Some(RoutingDecision::human_review(vec![reason.clone()]));
                Self::open_task(doc, event);
            }
            EventPayload::Validated { report } => {
                let next = self.transition(id, StageOutput::Validator)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.report = Some(report.clone());
            }
            EventPayload::Routed {
                decision,
                flagged_fields,
            } => {
                let next = self.transition(id, StageOutput::Router(decision.route))?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.routing = Some(decision.clone());
                doc.flagged_fields = flagged_fields.clone();
                match decision.route {
                    Route::HumanReview => Self::open_task(doc, event),
                    Route::AutoAccept => {
                        let how = doc
                            .task
                            .as_ref()
                            .and_then(|t| t.pending_resolution)
                            .unwrap_or(Resolution::Inherited);
                        Self::close_task(doc, event.ts, how, None);
                    }
                    Route::NonAiFallback => doc.fallback_reason = decision.reasons.first().cloned(),
                }
            }
            EventPayload::Fallback { reason } => {
                let next = self.transition(id, StageOutput::Fallback)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.fallback_reason = Some(reason.clone());
                doc.routing = Some(RoutingDecision::fallback(reason.clone()));
            }
            EventPayload::FeedbackRecorded { feedback, pattern } => {
                let doc = self.doc_mut(id)?;
                if !doc.has_open_task() {
                    return Err(StoreError::NoOpenTask(id.to_string()));
                }
                if let Some(t) = doc.task.as_mut() {
                    t.feedback_ids.push(feedback.feedback_id.clone());
                }
                self.feedback.push((feedback.clone(), pattern.clone()));
            }
            EventPayload::Corrected { value, .. } => {
                let next = self.transition(id, StageOutput::Correction)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                if !doc.replace_value(value) {
                    doc.records.push(ConsensusRecord {
                        field: value.field.clone(),
                        chosen: value.clone(),
                        agreement: Agreement::Single,
                        flagged: false,
                    });
                }
                doc.human_actions += 1;
                if let Some(t) = doc.task.as_mut() {
                    t.status = TaskStatus::InProgress;
                    t.pending_resolution = Some(Resolution::Corrected);
                }
            }
            EventPayload::PromptCommitted { version } => {
                self.prompts.commit(version.clone())?;
            }
            EventPayload::ParserConfigCommitted { config } => {
                self.parser_history.push(self.parser_config.clone());
                self.parser_config = config.clone();
            }
            EventPayload::Inherited { feedback_id, .. } => {
                self.doc_mut(id)?.inherited_from.push(feedback_id.clone());
            }
            EventPayload::Reextracted {
                field,
                prompt_version,
                record,
                round,
            } => {
                let next = self.transition(id, StageOutput::Reextraction)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                doc.round = *round;
                doc.prompt_version = Some(*prompt_version);
                let mut found = false;
                for r in doc.records.iter_mut().filter(|r| &r.field == field) {
                    *r = record.clone();
                    found = true;
                }
                if !found {
                    doc.records.push(record.clone());
                }
                doc.report = None;
                if let Some(t) = doc.task.as_mut() {
                    t.pending_resolution = Some(Resolution::Inherited);
                }
            }
            EventPayload::Confirmed { review_seconds, .. } => {
                let next = self.transition(id, StageOutput::Confirmation)?;
                let doc = self.doc_mut(id)?;
                doc.state = next;
                for r in &mut doc.records {
                    r.chosen.confidence = 1.0;
                    r.flagged = false;
                }
                if let Some(report) = &mut doc.report {
                    for v in &mut report.adjusted {
                        v.confidence = 1.0;
                    }
                }
                doc.human_actions += 1;
                Self::close_task(doc, event.ts, Resolution::Confirmed, *review_seconds);
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }

    pub fn task(&self, doc_id: &str) -> Option<ReviewTask> {
        let doc = self.docs.get(doc_id)?;
        let t = doc.task.as_ref()?;
        Some(ReviewTask {
            doc_id: doc.doc_id.clone(),
            category: doc.category(),
            state: doc.state,
            markdown: doc.parsed.as_ref().map(|p| p.markdown.clone()),
            extraction: doc.records.clone(),
            fields: doc.values(),
            validation: doc.report.clone(),
            reasons: doc
                .routing
                .as_ref()
                .map(|r| r.reasons.clone())
                .unwrap_or_default(),
            flagged_fields: doc.flagged_fields.clone(),
            status: t.status,
            opened_at: t.opened_at,
            resolved_at: t.resolved_at,
            review_seconds: t.review_seconds,
            resolution: t.resolution,
            feedback_ids: t.feedback_ids.clone(),
        })
    }

    /// Tasks oldest first, optionally filtered by status.
    pub fn queue(&self, status: Option<TaskStatus>) -> Vec<TaskSummary> {
        let mut tasks: Vec<(u64, TaskSummary)> = self
            .docs
            .values()
            .filter_map(|d| {
                let t = d.task.as_ref()?;
                if status.is_some_and(|s| s != t.status) {
                    return None;
                }
                Some((
                    t.opened_seq,
                    TaskSummary {
                        doc_id: d.doc_id.clone(),
                        category: d.category(),
                        status: t.status,
                        opened_at: t.opened_at,
                        reasons: d
                            .routing
                            .as_ref()
                            .map(|r| r.reasons.clone())
                            .unwrap_or_default(),
                    },
                ))
            })
            .collect();
        tasks.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
        tasks.into_iter().map(|(_, t)| t).collect()
    }

    pub fn stats(&self) -> PipelineStats {
        let units: Vec<&DocRecord> = self.units().collect();
        let count = |s: PipelineState| units.iter().filter(|d| d.state == s).count();
        let reviewed = units.iter().filter(|d| d.task.is_some()).count();
        let mut stats = PipelineStats::from_counts(
            units.len(),
            count(PipelineState::Accepted),
            count(PipelineState::Fallback),
            reviewed,
        );
        stats.in_review = count(PipelineState::InReview);
        let times: Vec<f64> = units
            .iter()
            .filter(|d| d.human_actions > 0)
            .filter_map(|d| d.task.as_ref()?.review_seconds)
            .collect();
        if !times.is_empty() {
            stats.avg_review_seconds = Some(times.iter().sum::<f64>() / times.len() as f64);
        }
        stats
    }

    pub fn pending_docs(&self) -> Vec<PendingDoc> {
        self.units()
            .map(|d| PendingDoc {
                doc_id: d.doc_id.clone(),
                category: d.category(),
                state: d.state,
                flagged_fields: d.flagged_fields.clone(),
            })
            .collect()
    }
}

fn new_record(
    bundle: DocBundle,
    parent: Option<String>,
    state: PipelineState,
    seq: u64,
) -> DocRecord {
    DocRecord {
        doc_id: bundle.doc_id.clone(),
        parent,
        children: Vec::new(),
        bundle,
        state,
        ingested_seq: seq,
        label: None,
        page_labels: Vec::new(),
        units: Vec::new(),
        ambiguous_split: false,
        parsed: None,
        parse_fallback: None,
        prompt_version: None,
        records: Vec::new(),
        round: 0,
        report: None,
        routing: None,
        flagged_fields: Vec::new(),
        fallback_reason: None,
        task: None,
        human_actions: 0,
        inherited_from: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Page, TextBlock};

    fn ev(seq: u64, doc: &str, payload: EventPayload) -> Event {
        Event {
            seq,
            ts: DateTime::from_timestamp(seq as i64, 0).unwrap(),
            doc_id: doc.into(),
            payload,
        }
    }

    fn bundle(id: &str, pages: usize) -> DocBundle {
        DocBundle {
            doc_id: id.into(),
            source_name: format!("{id}.json"),
            pages: (0..pages)
                .map(|i| {
                    let mut p = Page::new(i);
                    p.blocks.push(TextBlock::new("x", 0.1, 0.1, 0.2, 0.2, 10.0));
                    p
                })
                .collect(),
            received_at: None,
        }
    }

    fn label() -> CategoryLabel {
        CategoryLabel::new("ACME", DocType::Invoice, 0.9).unwrap()
    }

    #[test]
    fn empty_stats() {
        let s = Store::default().stats();
        assert_eq!(s.total_docs, 0);
        assert_eq!(s.automation_rate, None);
        assert!(Store::default().queue(None).is_empty());
    }

    #[test]
    fn stats_from_counts() {
        let s = PipelineStats::from_counts(955, 926, 29, 0);
        assert!((s.automation_rate.unwrap() - 0.970).abs() < 5e-4);
        let s = PipelineStats::from_counts(100, 100, 0, 15);
        assert_eq!(s.review_rate, Some(0.15));
    }

    #[test]
    fn split_creates_children() {
        let units = vec![
            LogicalUnit {
                unit_id: "b-u1".into(),
                page_range: (0, 2),
                head_label: label(),
            },
            LogicalUnit {
                unit_id: "b-u2".into(),
                page_range: (3, 4),
                head_label: label(),
            },
        ];
        let events = vec![
            ev(
                1,
                "b",
                EventPayload::Ingested {
                    bundle: bundle("b", 5),
                },
            ),
            ev(
                2,
                "b",
                EventPayload::Classified {
                    label: label(),
                    page_labels: vec![label(); 5],
                },
            ),
            ev(
                3,
                "b",
                EventPayload::Split {
                    units,
                    ambiguous: false,
                },
            ),
        ];
        let s = Store::replay(&events).unwrap();
        let ids: Vec<&str> = s.units().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["b-u1", "b-u2"]);
        assert_eq!(s.doc("b-u2").unwrap().bundle.pages.len(), 2);
        assert_eq!(s.doc("b-u2").unwrap().state, PipelineState::Split);
        assert_eq!(s.stats().total_docs, 2);
    }

    #[test]
    fn out_of_order_rejected_without_mutation() {
        let mut s = Store::default();
        s.apply(&ev(
            1,
            "d",
            EventPayload::Ingested {
                bundle: bundle("d", 1),
            },
        ))
        .unwrap();
        let before = s.clone();
        let err = s
            .apply(&ev(
                2,
                "d",
                EventPayload::Split {
                    units: vec![],
                    ambiguous: false,
                },
            ))
            .unwrap_err();
        assert!(matches!(err, StoreError::State { .. }));
        assert_eq!(s, before);
        assert!(matches!(
            s.apply(&ev(
                1,
                "e",
                EventPayload::Ingested {
                    bundle: bundle("e", 1)
                }
            )),
            Err(StoreError::Sequence { .. })
        ));
        assert!(matches!(
            s.apply(&ev(
                5,
                "d",
                EventPayload::Ingested {
                    bundle: bundle("d", 1)
                }
            )),
            Err(StoreError::Duplicate(_))
        ));
    }
}
