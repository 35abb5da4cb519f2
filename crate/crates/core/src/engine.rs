//! Orchestrator: drives documents through the stages, emits events and
//! closes the correction loop.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classify, CategorySignature, ExternalClassifier};
use crate::config::PipelineConfig;
use crate::endpoint::{HttpEndpoint, RetryPolicy};
use crate::events::{Clock, Event, EventLog, EventPayload, LogError, SystemClock};
use crate::extract::{
    assemble_prompt, build_backends, consensus, extract_parallel, Backend, ConsensusRecord,
    PromptVersion, ReaderBackend,
};
use crate::model::{
    Category, CategoryLabel, DocBundle, FieldValue, ModelError, Route, RoutingDecision, Schema,
};
use crate::normalize::{is_missing_raw, normalize, MISSING_MARKER};
use crate::parse::{render_markdown, render_naive, ExternalParser, ParsedDoc, ParserConfig};
use crate::pftfi::{
    apply_feedback, classify_error, inherit, CorrectionFeedback, FeedbackUpdate, PftfiError,
    PromptStore, ReextractTask,
};
use crate::split::{detect_boundaries, is_ambiguous, LogicalUnit};
use crate::state::PipelineState;
use crate::store::{DocRecord, PipelineStats, ReviewTask, Store, StoreError};
use crate::validate::{route, validate, CheckStatus, ValidationReport};

pub const AMBIGUOUS_SPLIT_REASON: &str = "page boundaries are ambiguous";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown document {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Bundle(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Prompt(#[from] PftfiError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Invalid,
    Internal,
}

impl EngineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            EngineError::NotFound(_) | EngineError::Store(StoreError::UnknownDoc(_)) => {
                ErrorKind::NotFound
            }
            EngineError::Conflict(_)
            | EngineError::Store(
                StoreError::Duplicate(_) | StoreError::NoOpenTask(_) | StoreError::State { .. },
            )
            | EngineError::Prompt(PftfiError::Conflict { .. }) => ErrorKind::Conflict,
            EngineError::Invalid(_) | EngineError::Bundle(_) => ErrorKind::Invalid,
            _ => ErrorKind::Internal,
        }
    }
}

/// A stage that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Classifier,
    Splitter,
    Parser,
    Validator,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Classifier,
        Stage::Splitter,
        Stage::Parser,
        Stage::Validator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Classifier => "classifier",
            Stage::Splitter => "splitter",
            Stage::Parser => "parser",
            Stage::Validator => "validator",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                format!("unknown stage {s:?}; expected classifier, splitter, parser or validator")
            })
    }
}

/// The stateless part of the engine: configuration and stage adapters.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub signatures: Vec<CategorySignature>,
    pub backends: Vec<Arc<dyn Backend>>,
    pub classifier: Option<ExternalClassifier>,
    pub parser: Option<ExternalParser>,
    pub ablation: BTreeSet<Stage>,
}

impl Pipeline {
    /// Backends and external adapters as configured. With no backend
    /// configured a single reader backend is used.
    pub fn from_config(config: PipelineConfig, signatures: Vec<CategorySignature>) -> Self {
        let mut backends = build_backends(&config.backends, &config.retry);
        if backends.is_empty() {
            backends.push(Arc::new(ReaderBackend::new("reader")));
        }
        let retry = RetryPolicy::from(&config.retry);
        let classifier = config.classifier_endpoint.as_ref().map(|e| {
            ExternalClassifier::new(
                Arc::new(HttpEndpoint::new(&e.url, e.timeout())),
                retry.clone(),
            )
        });
        let parser = config.parser_endpoint.as_ref().map(|e| {
            ExternalParser::new(
                Arc::new(HttpEndpoint::new(&e.url, e.timeout())),
                retry.clone(),
            )
        });
        Pipeline {
            config,
            signatures,
            backends,
            classifier,
            parser,
            ablation: BTreeSet::new(),
        }
    }

    pub fn with_backends(mut self, backends: Vec<Arc<dyn Backend>>) -> Self {
        self.backends = backends;
        self
    }

    pub fn with_ablation(mut self, stages: impl IntoIterator<Item = Stage>) -> Self {
        self.ablation = stages.into_iter().collect();
        self
    }

    pub fn ablated(&self, stage: Stage) -> bool {
        self.ablation.contains(&stage)
    }

    /// Schema for a category. Without a classifier every document is read
    /// as an invoice.
    pub fn schema_for(&self, category: &Category) -> Option<Schema> {
        Schema::for_doc_type(category.doc_type)
            .or_else(|| self.ablated(Stage::Classifier).then(Schema::invoice))
    }

    fn classify_pages(&self, bundle: &DocBundle) -> Result<Vec<CategoryLabel>, String> {
        if self.ablated(Stage::Classifier) {
            return Ok(bundle
                .pages
                .iter()
                .map(|_| CategoryLabel::unknown(0.0))
                .collect());
        }
        bundle
            .pages
            .iter()
            .map(|page| match &self.classifier {
                Some(ext) => ext
                    .classify_external(page, None, &self.config)
                    .map_err(|e| format!("classification failed: {e}")),
                None => Ok(classify(page, &self.signatures, &self.config)),
            })
            .collect()
    }

    fn split(&self, bundle: &DocBundle, labels: &[CategoryLabel]) -> (Vec<LogicalUnit>, bool) {
        let whole = || LogicalUnit {
            unit_id: bundle.doc_id.clone(),
            page_range: (0, bundle.pages.len().saturating_sub(1)),
            head_label: labels[0].clone(),
        };
        if self.ablated(Stage::Splitter) {
            return (vec![whole()], false);
        }
        let units =
            detect_boundaries(bundle, labels, &self.config).unwrap_or_else(|_| vec![whole()]);
        let ambiguous = is_ambiguous(bundle, &units);
        (units, ambiguous)
    }

    /// Classification and splitting of a freshly ingested bundle.
    pub fn front(&self, bundle: &DocBundle) -> Vec<EventPayload> {
        let page_labels = match self.classify_pages(bundle) {
            Ok(labels) => labels,
            Err(reason) => return vec![EventPayload::Fallback { reason }],
        };
        let (units, ambiguous) = self.split(bundle, &page_labels);
        vec![
            EventPayload::Classified {
                label: page_labels[0].clone(),
                page_labels,
            },
            EventPayload::Split { units, ambiguous },
        ]
    }

    pub fn parse(&self, doc: &DocRecord, parser_cfg: &ParserConfig) -> (ParsedDoc, Option<String>) {
        if self.ablated(Stage::Parser) {
            return (
                render_naive(&doc.doc_id, &doc.bundle.pages, parser_cfg),
                None,
            );
        }
        let category = doc.category();
        let mut cfg_notes = parser_cfg.notes_for(&category);
        let (mut parsed, fallback) = match &self.parser {
            Some(ext) => {
                let unit = LogicalUnit {
                    unit_id: doc.doc_id.clone(),
                    page_range: (0, doc.bundle.pages.len().saturating_sub(1)),
                    head_label: doc
                        .label
                        .clone()
                        .unwrap_or_else(|| CategoryLabel::unknown(0.0)),
                };
                let out = ext.parse_external(&unit, &doc.bundle.pages, parser_cfg);
                (out.parsed, out.fallback)
            }
            None => (
                render_markdown(&doc.doc_id, &doc.bundle.pages, parser_cfg),
                None,
            ),
        };
        parsed.layout_notes.append(&mut cfg_notes);
        parsed.layout_notes.dedup();
        (parsed, fallback)
    }

    /// Consensus over every backend that answered.
    pub fn extract(
        &self,
        doc_id: &str,
        parsed: &ParsedDoc,
        schema: &Schema,
        version: &PromptVersion,
    ) -> Result<(Vec<ConsensusRecord>, Vec<String>), String> {
        let prompt = assemble_prompt(schema, parsed, version, self.config.max_examples)
            .map_err(|e| e.to_string())?;
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        let mut errors = Vec::new();
        for (id, result) in extract_parallel(&prompt, &self.backends, doc_id) {
            match result {
                Ok(values) => ok.push((id, values)),
                Err(e) => {
                    log::warn!("{doc_id}: backend {id}: {e}");
                    errors.push(e.to_string());
                    failed.push(id);
                }
            }
        }
        if ok.is_empty() {
            let detail = if errors.is_empty() {
                "no backends configured".to_string()
            } else {
                errors.join("; ")
            };
            return Err(format!("extraction failed: {detail}"));
        }
        let records = consensus(&ok, schema).map_err(|e| e.to_string())?;
        Ok((records, failed))
    }

    /// Report plus the fields a reviewer should look at. With the validator
    /// switched off no checks run and routing depends on confidence alone.
    pub fn validate(
        &self,
        doc_id: &str,
        records: &[ConsensusRecord],
        schema: &Schema,
        category: &Category,
    ) -> (ValidationReport, Vec<String>) {
        let report = if self.ablated(Stage::Validator) {
            let adjusted: Vec<FieldValue> = records.iter().map(|r| r.chosen.clone()).collect();
            let flagged: Vec<String> = records
                .iter()
                .filter(|r| r.flagged)
                .map(|r| r.field.clone())
                .collect();
            let routing = route(&adjusted, &flagged, &[], schema, category, &self.config);
            ValidationReport {
                doc_id: doc_id.to_string(),
                outcomes: Vec::new(),
                adjusted,
                routing,
            }
        } else {
            validate(doc_id, records, schema, category, &self.config)
        };
        let mut flagged: BTreeSet<String> = report
            .outcomes
            .iter()
            .filter(|o| o.status == CheckStatus::Fail)
            .flat_map(|o| o.affected_fields.iter().cloned())
            .collect();
        flagged.extend(
            records
                .iter()
                .filter(|r| r.flagged)
                .map(|r| r.field.clone()),
        );
        for f in schema.fields().iter().filter(|f| f.required) {
            let conf = report
                .adjusted
                .iter()
                .find(|v| v.field == f.name)
                .map_or(0.0, |v| v.confidence);
            if conf < self.config.threshold_for(category, &f.name) {
                flagged.insert(f.name.clone());
            }
        }
        (report, flagged.into_iter().collect())
    }

    fn routed(report: &ValidationReport, flagged: Vec<String>, ambiguous: bool) -> EventPayload {
        let mut decision = report.routing.clone();
        if ambiguous {
            let mut reasons = decision.reasons.clone();
            reasons.push(AMBIGUOUS_SPLIT_REASON.to_string());
            decision = RoutingDecision::human_review(reasons);
        }
        EventPayload::Routed {
            decision,
            flagged_fields: flagged,
        }
    }

    /// Events taking a split document from its current state to a routing
    /// decision. Resumes documents left mid-way by an interrupted run.
    pub fn advance(
        &self,
        doc: &DocRecord,
        prompts: &PromptStore,
        parser_cfg: &ParserConfig,
    ) -> Vec<EventPayload> {
        let category = doc.category();
        let unknown = doc.label.as_ref().is_none_or(CategoryLabel::is_unknown);
        if unknown && !self.ablated(Stage::Classifier) {
            return vec![EventPayload::Fallback {
                reason: "unknown category".to_string(),
            }];
        }
        let Some(schema) = self.schema_for(&category) else {
            return vec![EventPayload::Fallback {
                reason: format!("no schema for document type {}", category.doc_type),
            }];
        };
        let mut out = Vec::new();
        let mut state = doc.state;
        let mut parsed = doc.parsed.clone();
        let mut records = doc.records.clone();
        let mut report = doc.report.clone();
        loop {
            match state {
                PipelineState::Split => {
                    let (p, fallback) = self.parse(doc, parser_cfg);
                    out.push(EventPayload::Parsed {
                        parsed: p.clone(),
                        external_fallback: fallback,
                    });
                    parsed = Some(p);
                    state = PipelineState::Parsed;
                }
                PipelineState::Parsed => {
                    let Some(p) = parsed.as_ref() else { break };
                    let version = prompts.head(&category);
                    match self.extract(&doc.doc_id, p, &schema, &version) {
                        Ok((r, failed)) => {
                            out.push(EventPayload::Extracted {
                                prompt_version: version.version_id,
                                records: r.clone(),
                                failed_backends: failed,
                            });
                            records = r;
                            state = PipelineState::Extracted;
                        }
                        Err(reason) => {
                            out.push(EventPayload::ExtractionFailed { reason });
                            break;
                        }
                    }
                }
                PipelineState::Extracted => {
                    let (r, _) = self.validate(&doc.doc_id, &records, &schema, &category);
                    out.push(EventPayload::Validated { report: r.clone() });
                    report = Some(r);
                    state = PipelineState::Validated;
                }
                PipelineState::Validated => {
                    let Some(r) = report.as_ref() else { break };
                    let (_, flagged) = self.validate(&doc.doc_id, &records, &schema, &category);
                    out.push(Self::routed(r, flagged, doc.ambiguous_split));
                    break;
                }
                _ => break,
            }
        }
        out
    }
}

/// Outcome of a reviewer correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    #[serde(flatten)]
    pub task: ReviewTask,
    pub feedback_id: String,
    /// Documents re-extracted under the new prompt version.
    pub inherited: Vec<String>,
}

type Observer = Box<dyn FnMut(&Event, &Store) + Send>;

pub struct Engine {
    pipeline: Pipeline,
    store: Store,
    log: EventLog,
    clock: Arc<dyn Clock>,
    observer: Option<Observer>,
    prompt_dir: Option<PathBuf>,
}

impl Engine {
    /// Rebuilds state from whatever the log already holds.
    pub fn new(pipeline: Pipeline, log: EventLog) -> Result<Self, EngineError> {
        let store = Store::replay(log.events())?;
        Ok(Engine {
            pipeline,
            store,
            log,
            clock: Arc::new(SystemClock),
            observer: None,
            prompt_dir: None,
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Called after every applied event with the updated store.
    pub fn with_observer(mut self, observer: impl FnMut(&Event, &Store) + Send + 'static) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    /// Mirrors prompt lineages to `dir` after every commit.
    pub fn with_prompt_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.prompt_dir = Some(dir.into());
        self
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn events(&self) -> &[Event] {
        self.log.events()
    }

    pub fn stats(&self) -> PipelineStats {
        self.store.stats()
    }

    fn emit(&mut self, doc_id: &str, payload: EventPayload) -> Result<(), EngineError> {
        let event = Event {
            seq: self.log.next_seq(),
            ts: self.clock.now(),
            doc_id: doc_id.to_string(),
            payload,
        };
        self.store.apply(&event)?;
        self.log.append(event.clone())?;
        if let Some(obs) = self.observer.as_mut() {
            obs(&event, &self.store);
        }
        if matches!(event.payload, EventPayload::PromptCommitted { .. }) {
            if let Some(dir) = &self.prompt_dir {
                self.store.prompts.write_dir(dir)?;
            }
        }
        Ok(())
    }

    pub fn ingest(&mut self, bundle: DocBundle) -> Result<(), EngineError> {
        bundle.validate()?;
        let id = bundle.doc_id.clone();
        self.emit(&id, EventPayload::Ingested { bundle })
    }

    /// Processes every unfinished document with `jobs` workers. Stage work
    /// runs in parallel; events are emitted in ingest order.
    pub fn run_all(&mut self, jobs: usize) -> Result<PipelineStats, EngineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?;
        let fresh: Vec<DocBundle> = self
            .store
            .docs()
            .filter(|d| d.state == PipelineState::Ingested)
            .map(|d| d.bundle.clone())
            .collect();
        let pipeline = &self.pipeline;
        let fronts: Vec<(String, Vec<EventPayload>)> = pool.install(|| {
            fresh
                .par_iter()
                .map(|b| (b.doc_id.clone(), pipeline.front(b)))
                .collect()
        });
        for (id, payloads) in fronts {
            for p in payloads {
                self.emit(&id, p)?;
            }
        }
        let todo: Vec<DocRecord> = self
            .store
            .units()
            .filter(|d| {
                matches!(
                    d.state,
                    PipelineState::Split
                        | PipelineState::Parsed
                        | PipelineState::Extracted
                        | PipelineState::Validated
                )
            })
            .cloned()
            .collect();
        let (pipeline, prompts, parser_cfg) = (
            &self.pipeline,
            &self.store.prompts,
            &self.store.parser_config,
        );
        let backs: Vec<(String, Vec<EventPayload>)> = pool.install(|| {
            todo.par_iter()
                .map(|d| (d.doc_id.clone(), pipeline.advance(d, prompts, parser_cfg)))
                .collect()
        });
        for (id, payloads) in backs {
            for p in payloads {
                self.emit(&id, p)?;
            }
        }
        Ok(self.store.stats())
    }

    fn open_doc(&self, doc_id: &str) -> Result<&DocRecord, EngineError> {
        let doc = self
            .store
            .doc(doc_id)
            .ok_or_else(|| EngineError::NotFound(doc_id.to_string()))?;
        if !doc.has_open_task() {
            return Err(EngineError::Conflict(format!(
                "document {doc_id} has no open review task"
            )));
        }
        Ok(doc)
    }

    fn schema_of(&self, doc: &DocRecord) -> Result<Schema, EngineError> {
        let category = doc.category();
        self.pipeline
            .schema_for(&category)
            .ok_or_else(|| EngineError::Invalid(format!("no schema for category {category}")))
    }

    /// Validates and routes a document from its current records.
    fn revalidate(&mut self, doc_id: &str) -> Result<(), EngineError> {
        let doc = self
            .store
            .doc(doc_id)
            .ok_or_else(|| EngineError::NotFound(doc_id.to_string()))?;
        let schema = self.schema_of(doc)?;
        let category = doc.category();
        let ambiguous = doc.ambiguous_split;
        let (report, flagged) = self
            .pipeline
            .validate(doc_id, &doc.records, &schema, &category);
        let routed = Pipeline::routed(&report, flagged, ambiguous);
        self.emit(doc_id, EventPayload::Validated { report })?;
        self.emit(doc_id, routed)
    }

    /// Records a reviewer correction, commits the resulting prompt or parser
    /// update, re-validates the document and re-extracts the field on every
    /// same-category document that inherits the new version.
    pub fn correct(
        &mut self,
        doc_id: &str,
        field: &str,
        raw: &str,
        reviewer: &str,
    ) -> Result<Correction, EngineError> {
        let doc = self.open_doc(doc_id)?;
        let schema = self.schema_of(doc)?;
        let spec = schema.get(field).ok_or_else(|| {
            EngineError::Invalid(format!("{field} is not a field of {}", doc.category()))
        })?;
        let raw = raw.trim();
        if is_missing_raw(raw) {
            return Err(EngineError::Invalid(format!("{field}: empty correction")));
        }
        let normalized = normalize(spec.kind, raw);
        if normalized.is_invalid() {
            return Err(EngineError::Invalid(format!(
                "{field}: {raw:?} is not a valid {}",
                spec.kind.as_str()
            )));
        }
        let current = doc.values().into_iter().find(|v| v.field == field);
        if current.as_ref().is_some_and(|v| v.raw.trim() == raw) {
            return Err(EngineError::Invalid(format!(
                "{field}: correction equals the current value"
            )));
        }
        let category = doc.category();
        let head = self.store.prompts.head(&category);
        let markdown = doc
            .parsed
            .as_ref()
            .map(|p| p.markdown.clone())
            .unwrap_or_default();
        let round = doc.round;
        let feedback_id = format!("fb-{}", self.store.feedback.len() + 1);
        let fb = CorrectionFeedback {
            feedback_id: feedback_id.clone(),
            doc_id: doc_id.to_string(),
            field: field.to_string(),
            original_value: current.map_or_else(|| MISSING_MARKER.to_string(), |v| v.raw),
            corrected_value: raw.to_string(),
            doc_type: category.doc_type,
            supplier_id: category.supplier_id.clone(),
            reviewer_id: reviewer.to_string(),
            ts: self.clock.now(),
        };
        let pattern = classify_error(&fb, &schema);
        let update = apply_feedback(
            &fb,
            &pattern,
            &head,
            self.store.prompts.head_id(&category),
            &self.store.parser_config,
            &markdown,
            &schema,
            self.pipeline.config.max_examples,
        )?;
        let value = FieldValue {
            field: field.to_string(),
            raw: raw.to_string(),
            normalized,
            confidence: 1.0,
            backend_id: format!("human:{reviewer}"),
            prompt_version: head.version_id.to_string(),
        };
        self.emit(
            doc_id,
            EventPayload::FeedbackRecorded {
                feedback: fb.clone(),
                pattern,
            },
        )?;
        self.emit(
            doc_id,
            EventPayload::Corrected {
                feedback_id: feedback_id.clone(),
                value,
            },
        )?;
        let new_version = match update {
            FeedbackUpdate::Prompt { version } => {
                self.emit(
                    doc_id,
                    EventPayload::PromptCommitted {
                        version: version.clone(),
                    },
                )?;
                Some(version)
            }
            FeedbackUpdate::Parser { config } => {
                self.emit(doc_id, EventPayload::ParserConfigCommitted { config })?;
                None
            }
        };
        self.revalidate(doc_id)?;
        let mut inherited = Vec::new();
        if let Some(version) = new_version {
            for task in inherit(&fb, &version, &self.store.pending_docs()) {
                if self.reextract(&task, &version, doc_id, round + 1)? {
                    inherited.push(task.doc_id);
                }
            }
        }
        let task = self
            .store
            .task(doc_id)
            .ok_or_else(|| EngineError::NotFound(doc_id.to_string()))?;
        Ok(Correction {
            task,
            feedback_id,
            inherited,
        })
    }

    /// Re-extracts one field under `version`. Documents whose backends give
    /// no answer are left as they are.
    fn reextract(
        &mut self,
        task: &ReextractTask,
        version: &PromptVersion,
        source: &str,
        round: u32,
    ) -> Result<bool, EngineError> {
        let Some(doc) = self.store.doc(&task.doc_id) else {
            return Ok(false);
        };
        let (Some(parsed), Ok(schema)) = (doc.parsed.as_ref(), self.schema_of(doc)) else {
            return Ok(false);
        };
        let record = match self
            .pipeline
            .extract(&task.doc_id, parsed, &schema, version)
        {
            Ok((records, _)) => records.into_iter().find(|r| r.field == task.field),
            Err(reason) => {
                log::warn!("{}: re-extraction skipped: {reason}", task.doc_id);
                None
            }
        };
        let Some(record) = record else {
            return Ok(false);
        };
        let doc_id = task.doc_id.clone();
        self.emit(
            &doc_id,
            EventPayload::Inherited {
                feedback_id: task.feedback_id.clone(),
                source_doc: source.to_string(),
                field: task.field.clone(),
                version: task.version,
                round,
            },
        )?;
        self.emit(
            &doc_id,
            EventPayload::Reextracted {
                field: task.field.clone(),
                prompt_version: version.version_id,
                record,
                round,
            },
        )?;
        self.revalidate(&doc_id)?;
        Ok(true)
    }

    /// Accepts the document as it stands.
    pub fn confirm(
        &mut self,
        doc_id: &str,
        reviewer: &str,
        review_seconds: Option<f64>,
    ) -> Result<ReviewTask, EngineError> {
        self.open_doc(doc_id)?;
        if review_seconds.is_some_and(|s| !s.is_finite() || s < 0.0) {
            return Err(EngineError::Invalid(
                "review_seconds must be a non-negative number".into(),
            ));
        }
        self.emit(
            doc_id,
            EventPayload::Confirmed {
                reviewer_id: reviewer.to_string(),
                review_seconds,
            },
        )?;
        self.store
            .task(doc_id)
            .ok_or_else(|| EngineError::NotFound(doc_id.to_string()))
    }

    /// Final route of a document, if it has one.
    pub fn route_of(&self, doc_id: &str) -> Option<Route> {
        self.store.doc(doc_id)?.routing.as_ref().map(|r| r.route)
    }
}
