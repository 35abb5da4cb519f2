//! Scoring a labeled corpus: document accuracy, field P/R/F1, intervention
//! rate, categories-OK and parser statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::AddAssign;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{train_signatures, CategorySignature};
use crate::config::{PipelineConfig, Unscripted};
use crate::engine::{Engine, EngineError, Pipeline, Stage};
use crate::events::{EventLog, SteppingClock};
use crate::extract::backend::Sidecar;
use crate::extract::{Backend, ScriptedBackend};
use crate::model::{Category, CategoryLabel, DocBundle, FieldValue, Schema};
use crate::normalize::normalize;
use crate::state::PipelineState;
use crate::store::TaskStatus;

pub const ORACLE_REVIEWER: &str = "oracle";
pub const CORPUS_BACKEND: &str = "scripted";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("document {doc_id}: truth does not fit its schema: {detail}")]
    SchemaMismatch { doc_id: String, detail: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("classifier training: {0}")]
    Training(String),
}

fn io_err(path: &Path, e: impl ToString) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Expected field values as printed in the document; `None` marks a field
/// that is explicitly absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub doc_id: String,
    pub category: Category,
    pub fields: BTreeMap<String, Option<String>>,
}

impl GroundTruth {
    pub fn schema(&self) -> Result<Schema, EvalError> {
        Schema::for_doc_type(self.category.doc_type).ok_or_else(|| EvalError::SchemaMismatch {
            doc_id: self.doc_id.clone(),
            detail: format!("no schema for {}", self.category.doc_type),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub fields: BTreeMap<String, Counts>,
    pub doc_correct: bool,
}

/// Per-field counts against the truth. A wrong value is both a false
/// positive and a false negative; a required field is correct when it
/// matches, or when both sides are absent.
pub fn score_document(
    extracted: &[FieldValue],
    truth: &GroundTruth,
    schema: &Schema,
) -> Result<DocScore, EvalError> {
    let mismatch = |detail: String| EvalError::SchemaMismatch {
        doc_id: truth.doc_id.clone(),
        detail,
    };
    if let Some(extra) = truth.fields.keys().find(|k| schema.get(k).is_none()) {
        return Err(mismatch(format!("unknown field {extra}")));
    }
    if let Some(f) = schema
        .fields()
        .iter()
        .find(|f| f.required && !truth.fields.contains_key(&f.name))
    {
        return Err(mismatch(format!(
            "required field {} has no truth entry",
            f.name
        )));
    }
    let mut fields = BTreeMap::new();
    let mut doc_correct = true;
    for f in schema.fields() {
        let want = truth
            .fields
            .get(&f.name)
            .cloned()
            .flatten()
            .map(|raw| normalize(f.kind, &raw))
            .filter(|n| !n.is_missing());
        let got = extracted
            .iter()
            .find(|v| v.field == f.name)
            .map(|v| v.normalized.clone())
            .filter(|n| !n.is_missing());
        let c = match (&want, &got) {
            (Some(w), Some(g)) if w.agreement_key() == g.agreement_key() => Counts {
                tp: 1,
                ..Counts::default()
            },
            (Some(_), Some(_)) => Counts {
                fp: 1,
                fn_: 1,
                ..Counts::default()
            },
            (Some(_), None) => Counts {
                fn_: 1,
                ..Counts::default()
            },
            (None, Some(_)) => Counts {
                fp: 1,
                ..Counts::default()
            },
            (None, None) => Counts::default(),
        };
        if f.required && (c.fp > 0 || c.fn_ > 0) {
            doc_correct = false;
        }
        fields.insert(f.name.clone(), c);
    }
    Ok(DocScore {
        doc_id: truth.doc_id.clone(),
        fields,
        doc_correct,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// An empty denominator scores 1 when the other error count is zero too.
    pub fn from_counts(c: Counts) -> Prf {
        let ratio = |num: u32, den: u32, other_err: u32| {
            if den > 0 {
                f64::from(num) / f64::from(den)
            } else if other_err == 0 {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(c.tp, c.tp + c.fp, c.fn_);
        let recall = ratio(c.tp, c.tp + c.fn_, c.fp);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Sum over categories of the fraction of correct documents.
pub fn categories_ok(results: &[(Category, bool)]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(per_category(results).values().sum())
}

pub fn per_category(results: &[(Category, bool)]) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    for (c, ok) in results {
        let e = tally.entry(c.key()).or_default();
        e.0 += u32::from(*ok);
        e.1 += 1;
    }
    tally
        .into_iter()
        .map(|(k, (ok, n))| (k, f64::from(ok) / f64::from(n)))
        .collect()
}

/// Summed counts per field and overall.
pub fn micro(scores: &[DocScore]) -> (BTreeMap<String, Prf>, Prf) {
    let mut per_field: BTreeMap<String, Counts> = BTreeMap::new();
    let mut all = Counts::default();
    for s in scores {
        for (f, c) in &s.fields {
            *per_field.entry(f.clone()).or_default() += *c;
            all += *c;
        }
    }
    (
        per_field
            .into_iter()
            .map(|(f, c)| (f, Prf::from_counts(c)))
            .collect(),
        Prf::from_counts(all),
    )
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestUnit {
    pub doc_id: String,
    pub page_range: (usize, usize),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestBundle {
    pub bundle_id: String,
    pub units: Vec<ManifestUnit>,
}

/// Corpus index: the expected partition of every bundle plus the ids of
/// documents built for specific checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    pub bundles: Vec<ManifestBundle>,
    pub token_target: Vec<String>,
    pub two_column: Vec<String>,
    pub flagged: Vec<String>,
}

/// Bundles, truth and backend scripts. On disk: `bundles/*.json`,
/// `truth/*.json`, `scripts/*.json` and `manifest.json`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub bundles: Vec<DocBundle>,
    pub truths: Vec<GroundTruth>,
    pub sidecars: Vec<Sidecar>,
    pub manifest: Manifest,
}

fn read_json_dir<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<Vec<T>, EvalError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| io_err(p, e))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Corpus, EvalError> {
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let text =
                std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
            serde_json::from_str(&text).map_err(|e| io_err(&manifest_path, e))?
        } else {
            Manifest::default()
        };
        let bundles: Vec<DocBundle> = read_json_dir(&dir.join("bundles"))?;
        if bundles.is_empty() {
            return Err(EvalError::EmptyCorpus);
        }
        Ok(Corpus {
            bundles,
            truths: read_json_dir(&dir.join("truth"))?,
            sidecars: read_json_dir(&dir.join("scripts"))?,
            manifest,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        for sub in ["bundles", "truth", "scripts"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| io_err(dir, e))?;
        }
        for b in &self.bundles {
            write_json(&dir.join("bundles").join(format!("{}.json", b.doc_id)), b)?;
        }
        for t in &self.truths {
            write_json(&dir.join("truth").join(format!("{}.json", t.doc_id)), t)?;
        }
        for s in &self.sidecars {
            write_json(&dir.join("scripts").join(format!("{}.json", s.doc_id)), s)?;
        }
        write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn truth(&self, doc_id: &str) -> Option<&GroundTruth> {
        self.truths.iter().find(|t| t.doc_id == doc_id)
    }

    /// Pages of a logical document: the whole bundle, or its slice for a
    /// batch unit listed in the manifest.
    pub fn unit_bundle(&self, doc_id: &str) -> Option<DocBundle> {
        if let Some(b) = self.bundles.iter().find(|b| b.doc_id == doc_id) {
            return Some(b.clone());
        }
        self.manifest.bundles.iter().find_map(|mb| {
            let unit = mb.units.iter().find(|u| u.doc_id == doc_id)?;
            let bundle = self.bundles.iter().find(|b| b.doc_id == mb.bundle_id)?;
            Some(bundle.slice(doc_id, unit.page_range.0, unit.page_range.1))
        })
    }

    /// Header signatures from the first page of every labeled document.
    pub fn train(&self, config: &PipelineConfig) -> Result<Vec<CategorySignature>, EvalError> {
        let labeled: Vec<(DocBundle, CategoryLabel)> = self
            .truths
            .iter()
            .filter_map(|t| {
                let b = self.unit_bundle(&t.doc_id)?;
                let label =
                    CategoryLabel::new(&t.category.supplier_id, t.category.doc_type, 1.0).ok()?;
                Some((b, label))
            })
            .collect();
        train_signatures(&labeled, config).map_err(|e| EvalError::Training(e.to_string()))
    }

    /// Scripted backend serving the corpus sidecars; unscripted documents
    /// are read from the prompt.
    pub fn backend(&self) -> ScriptedBackend {
        let b = ScriptedBackend::new(CORPUS_BACKEND, Unscripted::ReadDocument);
        for s in &self.sidecars {
            for (key, answer) in s.backends.get(CORPUS_BACKEND).into_iter().flatten() {
                b.script(&s.doc_id, key, answer.clone());
            }
        }
        b
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub ablate: BTreeSet<Stage>,
    /// Resolve every review task with the truth-driven reviewer.
    pub hitl: bool,
    pub jobs: usize,
    /// Pipeline configuration; with no backends configured the corpus
    /// scripts are used.
    pub config: Option<PipelineConfig>,
    pub log_path: Option<PathBuf>,
}

impl EvalOptions {
    pub fn full() -> Self {
        EvalOptions {
            hitl: true,
            jobs: 4,
            ..EvalOptions::default()
        }
    }

    pub fn ablating(stage: Stage) -> Self {
        EvalOptions {
            ablate: BTreeSet::from([stage]),
            ..EvalOptions::full()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub doc_accuracy: f64,
    pub fields: BTreeMap<String, Prf>,
    pub micro: Prf,
    pub intervention_rate: f64,
    pub categories_ok: f64,
    pub category_count: usize,
    pub per_category: BTreeMap<String, f64>,
    pub mean_seconds_per_doc: f64,
    /// Mean over all parsed documents, in percent.
    pub token_reduction_pct: Option<f64>,
    /// Mean over the manifest's token-target documents, in percent.
    pub token_reduction_target_pct: Option<f64>,
    pub table_cells_preserved_pct: Option<f64>,
    pub batches: usize,
    pub batches_split_ok: usize,
    pub fallback_docs: usize,
    pub human_actions: u32,
    pub ablated: Vec<Stage>,
    pub hitl: bool,
    pub incorrect: Vec<String>,
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let config = if self.ablated.is_empty() {
            "full pipeline".to_string()
        } else {
            format!(
                "without {}",
                self.ablated
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        };
        let hitl = if self.hitl { " + HITL" } else { "" };
        let mut out = String::new();
        out.push_str("| Configuration | Accuracy | Categories OK | Intervention | Micro F1 |\n");
        out.push_str("|---|---|---|---|---|\n");
        out.push_str(&format!(
            "| {config}{hitl} | {:.1}% | {:.1}/{} | {:.1}% | {:.3} |\n\n",
            self.doc_accuracy * 100.0,
            self.categories_ok,
            self.category_count,
            self.intervention_rate * 100.0,
            self.micro.f1
        ));
        out.push_str(&format!(
            "- documents: {} ({} fallback, {} human actions)\n",
            self.documents, self.fallback_docs, self.human_actions
        ));
        out.push_str(&format!(
            "- batches split correctly: {}/{}\n",
            self.batches_split_ok, self.batches
        ));
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.1}%"));
        out.push_str(&format!(
            "- token reduction: {} overall, {} on target documents\n",
            pct(self.token_reduction_pct),
            pct(self.token_reduction_target_pct)
        ));
        out.push_str(&format!(
            "- table cells preserved: {}\n",
            pct(self.table_cells_preserved_pct)
        ));
        out.push_str(&format!(
            "- mean processing time: {:.3} s/doc\n\n",
            self.mean_seconds_per_doc
        ));
        out.push_str("| Field | Precision | Recall | F1 |\n|---|---|---|---|\n");
        for (f, p) in &self.fields {
            out.push_str(&format!(
                "| {f} | {:.3} | {:.3} | {:.3} |\n",
                p.precision, p.recall, p.f1
            ));
        }
        out
    }
}

/// Drives every open review task to resolution: wrong fields are corrected
/// from the truth, then the document is confirmed.
pub fn oracle_review(engine: &mut Engine, corpus: &Corpus) -> Result<(), EvalError> {
    loop {
        let Some(next) = engine
            .store()
            .queue(None)
            .into_iter()
            .find(|t| t.status != TaskStatus::Resolved)
        else {
            return Ok(());
        };
        let doc_id = next.doc_id;
        if let Some(truth) = corpus.truth(&doc_id) {
            let category = engine.store().doc(&doc_id).map(|d| d.category());
            let schema = category.and_then(|c| engine.pipeline().schema_for(&c));
            for f in schema.iter().flat_map(|s| s.fields().iter()) {
                let Some(Some(raw)) = truth.fields.get(&f.name) else {
                    continue;
                };
                let Some(doc) = engine.store().doc(&doc_id).filter(|d| d.has_open_task()) else {
                    break;
                };
                let want = normalize(f.kind, raw).agreement_key();
                let have = doc.values().into_iter().find(|v| v.field == f.name);
                if have.is_some_and(|v| v.normalized.agreement_key() == want) {
                    continue;
                }
                if let Err(e) = engine.correct(&doc_id, &f.name, raw, ORACLE_REVIEWER) {
                    log::warn!("{doc_id}: correction of {} rejected: {e}", f.name);
                }
            }
        }
        if engine
            .store()
            .doc(&doc_id)
            .is_some_and(|d| d.has_open_task())
        {
            engine.confirm(&doc_id, ORACLE_REVIEWER, None)?;
        }
    }
}

/// Runs the corpus through a fresh engine and scores the result.
pub fn run_eval(corpus: &Corpus, options: &EvalOptions) -> Result<(EvalReport, Engine), EvalError> {
    if corpus.truths.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let config = options.config.clone().unwrap_or_default();
    let signatures = corpus.train(&config)?;
    let scripted = config.backends.is_empty();
    let mut pipeline =
        Pipeline::from_config(config, signatures).with_ablation(options.ablate.iter().copied());
    if scripted {
        let backend: Arc<dyn Backend> = Arc::new(corpus.backend());
        pipeline = pipeline.with_backends(vec![backend]);
    }
    let log = match &options.log_path {
        Some(p) => EventLog::open(p).map_err(EngineError::from)?,
        None => EventLog::in_memory(),
    };
    let mut engine = Engine::new(pipeline, log)?.with_clock(Arc::new(SteppingClock::fixed()));
    let started = Instant::now();
    for b in &corpus.bundles {
        engine.ingest(b.clone())?;
    }
    engine.run_all(options.jobs.max(1))?;
    let elapsed = started.elapsed().as_secs_f64();
    if options.hitl {
        oracle_review(&mut engine, corpus)?;
    }
    let report = score_run(&engine, corpus, options, elapsed)?;
    Ok((report, engine))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn score_run(
    engine: &Engine,
    corpus: &Corpus,
    options: &EvalOptions,
    elapsed: f64,
) -> Result<EvalReport, EvalError> {
    let store = engine.store();
    let mut scores = Vec::new();
    let mut results = Vec::new();
    let mut reviewed = 0usize;
    let mut human_actions = 0u32;
    let mut fallback = 0usize;
    for truth in &corpus.truths {
        let schema = truth.schema()?;
        let doc = store.doc(&truth.doc_id).filter(|d| !d.is_container());
        let values = doc.map(|d| d.values()).unwrap_or_default();
        let mut score = score_document(&values, truth, &schema)?;
        if doc.is_none_or(|d| d.state == PipelineState::Fallback) {
            score.doc_correct = false;
        }
        if let Some(d) = doc {
            reviewed += usize::from(d.task.is_some());
            human_actions += d.human_actions;
            fallback += usize::from(d.state == PipelineState::Fallback);
        }
        results.push((truth.category.clone(), score.doc_correct));
        scores.push(score);
    }
    let n = corpus.truths.len();
    let (fields, micro) = micro(&scores);
    let per_cat = per_category(&results);

    let units: Vec<_> = store.units().filter(|d| d.parsed.is_some()).collect();
    let reductions: Vec<f64> = units
        .iter()
        .filter_map(|d| d.parsed.as_ref())
        .map(|p| p.token_reduction() * 100.0)
        .collect();
    let target: BTreeSet<&str> = corpus
        .manifest
        .token_target
        .iter()
        .map(String::as_str)
        .collect();
    let target_reductions: Vec<f64> = units
        .iter()
        .filter(|d| target.contains(d.doc_id.as_str()))
        .filter_map(|d| d.parsed.as_ref())
        .map(|p| p.token_reduction() * 100.0)
        .collect();
    let (mut cells, mut kept) = (0usize, 0usize);
    for d in &units {
        let md = &d.parsed.as_ref().expect("filtered on parsed").markdown;
        for t in d.bundle.pages.iter().flat_map(|p| &p.tables) {
            for cell in t.cells.iter().map(|c| c.trim()).filter(|c| !c.is_empty()) {
                cells += 1;
                kept += usize::from(md.contains(&cell.replace('|', "\\|")));
            }
        }
    }
    let batches: Vec<_> = corpus
        .manifest
        .bundles
        .iter()
        .filter(|b| b.units.len() > 1)
        .collect();
    let split_ok = batches
        .iter()
        .filter(|mb| {
            store.doc(&mb.bundle_id).is_some_and(|d| {
                d.units.len() == mb.units.len()
                    && d.units.iter().zip(&mb.units).all(|(got, want)| {
                        got.unit_id == want.doc_id && got.page_range == want.page_range
                    })
            })
        })
        .count();

    Ok(EvalReport {
        documents: n,
        doc_accuracy: results.iter().filter(|r| r.1).count() as f64 / n as f64,
        fields,
        micro,
        intervention_rate: reviewed as f64 / n as f64,
        categories_ok: categories_ok(&results)?,
        category_count: per_cat.len(),
        per_category: per_cat,
        mean_seconds_per_doc: elapsed / n as f64,
        token_reduction_pct: mean(&reductions),
        token_reduction_target_pct: mean(&target_reductions),
        table_cells_preserved_pct: (cells > 0).then(|| kept as f64 / cells as f64 * 100.0),
        batches: batches.len(),
        batches_split_ok: split_ok,
        fallback_docs: fallback,
        human_actions,
        ablated: options.ablate.iter().copied().collect(),
        hitl: options.hitl,
        incorrect: scores
            .iter()
            .filter(|s| !s.doc_correct)
            .map(|s| s.doc_id.clone())
            .collect(),
    })
}
