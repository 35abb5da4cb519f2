//! Schema-driven extraction: prompt assembly, backend calls, response
//! parsing and consensus across parallel backends.

pub mod backend;
pub mod consensus;
pub mod prompt;

use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{FieldKind, FieldValue, Schema};
use crate::normalize::normalize;

pub use backend::{
    build_backends, Backend, BackendError, CompletionRequest, ReaderBackend, ScriptedBackend,
};
pub use consensus::{consensus, Agreement, ConsensusRecord};
pub use prompt::{assemble_prompt, Example, PromptBundle, PromptVersion, VersionId};

/// Confidence given to a bare value returned without a confidence object.
pub const BARE_VALUE_CONFIDENCE: f64 = 0.5;
pub const MAX_TOKENS: u32 = 2048;

const REPAIR_REMINDER: &str = "\n\nYour previous answer could not be parsed. Reply with only the JSON object described under Output format, with no surrounding text.";

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("schema has no fields")]
    EmptySchema,
    #[error("no backend results to merge")]
    NoResults,
    #[error("backend {backend_id} returned unparseable output twice")]
    Unparseable { backend_id: String },
    #[error("backend {backend_id} failed: {source}")]
    Backend {
        backend_id: String,
        source: BackendError,
    },
}

impl ExtractError {
    /// Failures that just remove one voter rather than the whole extraction.
    pub fn is_absence(&self) -> bool {
        matches!(
            self,
            ExtractError::Backend {
                source: BackendError::NoAnswer | BackendError::Timeout(_),
                ..
            }
        )
    }
}

/// Pulls the first JSON object out of a completion, tolerating code fences
/// and surrounding prose.
pub fn parse_response(text: &str) -> Option<Map<String, Value>> {
    if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(text.trim()) {
        return Some(m);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

fn raw_string(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        other => Some(other.to_string()),
    }
}

/// Maps a parsed response onto the schema: unknown keys are dropped and
/// every schema field is emitted, absent ones as missing with confidence 0.
pub fn field_values(
    schema: &Schema,
    response: &Map<String, Value>,
    backend_id: &str,
    prompt_version: &str,
) -> Vec<FieldValue> {
    schema
        .fields()
        .iter()
        .map(|f| {
            let (value, confidence) = match response.get(&f.name) {
                Some(Value::Object(o)) if o.contains_key("value") => {
                    let conf = o
                        .get("confidence")
                        .and_then(Value::as_f64)
                        .unwrap_or(BARE_VALUE_CONFIDENCE);
                    (o.get("value").and_then(raw_string), conf)
                }
                Some(Value::Object(_)) | None => (None, 0.0),
                Some(bare) => (raw_string(bare), BARE_VALUE_CONFIDENCE),
            };
            let value = match (f.kind, value) {
                (FieldKind::LineItems, Some(s)) if !s.trim_start().starts_with('[') => None,
                (_, v) => v,
            };
            match value {
                None => FieldValue::missing(&f.name, backend_id, prompt_version),
                Some(raw) => {
                    let normalized = normalize(f.kind, &raw);
                    if normalized.is_missing() {
                        return FieldValue::missing(&f.name, backend_id, prompt_version);
                    }
                    FieldValue {
                        field: f.name.clone(),
                        raw,
                        normalized,
                        confidence: confidence.clamp(0.0, 1.0),
                        backend_id: backend_id.to_string(),
                        prompt_version: prompt_version.to_string(),
                    }
                }
            }
        })
        .collect()
}

/// One backend call with a single repair retry on unparseable output.
pub fn extract(
    prompt: &PromptBundle,
    backend: &dyn Backend,
    doc_id: &str,
) -> Result<Vec<FieldValue>, ExtractError> {
    let mut request = CompletionRequest {
        doc_id: doc_id.to_string(),
        prompt_version: prompt.version_id,
        category: prompt.category.clone(),
        prompt: prompt.rendered_text.clone(),
        max_tokens: MAX_TOKENS,
        temperature: 0.0,
        repair: false,
    };
    let call = |req: &CompletionRequest| {
        backend
            .complete(req)
            .map_err(|source| ExtractError::Backend {
                backend_id: backend.id().to_string(),
                source,
            })
    };
    let version = prompt.version_id.to_string();
    if let Some(map) = parse_response(&call(&request)?) {
        return Ok(field_values(&prompt.schema, &map, backend.id(), &version));
    }
    log::debug!(
        "{}: unparseable answer from {}, retrying",
        doc_id,
        backend.id()
    );
    request.repair = true;
    request.prompt.push_str(REPAIR_REMINDER);
    match parse_response(&call(&request)?) {
        Some(map) => Ok(field_values(&prompt.schema, &map, backend.id(), &version)),
        None => Err(ExtractError::Unparseable {
            backend_id: backend.id().to_string(),
        }),
    }
}

pub type BackendResult = (String, Result<Vec<FieldValue>, ExtractError>);

/// Calls every backend concurrently; each one is waited for up to its own
/// timeout and reported as timed out afterwards. Results come back in
/// registry order.
pub fn extract_parallel(
    prompt: &PromptBundle,
    backends: &[Arc<dyn Backend>],
    doc_id: &str,
) -> Vec<BackendResult> {
    if backends.len() == 1 {
        let b = &backends[0];
        return vec![(b.id().to_string(), extract(prompt, b.as_ref(), doc_id))];
    }
    let (tx, rx) = mpsc::channel();
    for (i, b) in backends.iter().enumerate() {
        let tx = tx.clone();
        let b = Arc::clone(b);
        let prompt = prompt.clone();
        let doc_id = doc_id.to_string();
        std::thread::spawn(move || {
            let _ = tx.send((i, extract(&prompt, b.as_ref(), &doc_id)));
        });
    }
    drop(tx);
    let start = Instant::now();
    let deadlines: Vec<Instant> = backends.iter().map(|b| start + b.timeout()).collect();
    let mut slots: Vec<Option<Result<Vec<FieldValue>, ExtractError>>> = vec![None; backends.len()];
    loop {
        let pending: Vec<usize> = (0..slots.len()).filter(|i| slots[*i].is_none()).collect();
        let Some(next) = pending.iter().map(|i| deadlines[*i]).min() else {
            break;
        };
        match rx.recv_timeout(next.saturating_duration_since(Instant::now())) {
            Ok((i, r)) => slots[i] = Some(r),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let now = Instant::now();
                for i in pending.into_iter().filter(|i| deadlines[*i] <= now) {
                    slots[i] = Some(Err(ExtractError::Backend {
                        backend_id: backends[i].id().to_string(),
                        source: BackendError::Timeout(backends[i].timeout()),
                    }));
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    backends
        .iter()
        .zip(slots)
        .map(|(b, slot)| {
            let id = b.id().to_string();
            let r = slot.unwrap_or_else(|| {
                Err(ExtractError::Backend {
                    backend_id: id.clone(),
                    source: BackendError::NoAnswer,
                })
            });
            (id, r)
        })
        .collect()
}
