//! Model backends: scripted sidecar answers, the label-reading reference
//! reader, and a JSON-over-HTTP completion adapter.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::{BackendConfig, BackendKind, RetrySettings, Unscripted};
use crate::endpoint::{HttpEndpoint, JsonEndpoint, RetryError, RetryPolicy};
use crate::model::Category;

use super::prompt::{document_section, prompt_fields, VersionId};

/// Confidence the reader attaches to every value it finds.
pub const READER_CONFIDENCE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub doc_id: String,
    pub prompt_version: VersionId,
    pub category: Category,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Set on the single retry after an unparseable answer.
    pub repair: bool,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("backend has no answer for this document")]
    NoAnswer,
    #[error("backend did not answer within {0:?}")]
    Timeout(Duration),
    #[error(transparent)]
    Endpoint(#[from] RetryError),
    #[error("bad sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    fn timeout(&self) -> Duration {
        Duration::from_secs(30)
    }
}

/// Field labels the reader recognises, compared case-insensitively against
/// the text before the first colon of a line.
pub const FIELD_LABELS: &[(&str, &[&str])] = &[
    (
        "invoice_number",
        &[
            "invoice number",
            "invoice no.",
            "numero fattura",
            "fattura n.",
        ],
    ),
    (
        "invoice_date",
        &["invoice date", "data fattura", "data documento"],
    ),
    ("due_date", &["due date", "scadenza", "data scadenza"]),
    (
        "supplier_vat_id",
        &["vat id", "vat number", "partita iva", "p. iva", "p.iva"],
    ),
    ("currency", &["currency", "valuta"]),
    ("vat_rate", &["vat rate", "aliquota iva", "aliquota"]),
    ("subtotal", &["subtotal", "imponibile", "net amount"]),
    ("tax_amount", &["vat amount", "tax amount", "importo iva"]),
    (
        "total_amount",
        &[
            "total",
            "total amount",
            "total due",
            "totale",
            "totale documento",
        ],
    ),
    (
        "delivery_number",
        &[
            "delivery note number",
            "delivery number",
            "numero ddt",
            "ddt n.",
        ],
    ),
    (
        "delivery_date",
        &["delivery date", "data consegna", "data ddt"],
    ),
    (
        "total_quantity",
        &["total quantity", "quantità totale", "colli totali"],
    ),
];

const COLUMN_LABELS: &[(&str, &[&str])] = &[
    (
        "description",
        &["description", "descrizione", "item", "articolo"],
    ),
    ("quantity", &["qty", "quantity", "quantità", "qta"]),
    (
        "unit_price",
        &["unit price", "price", "prezzo", "prezzo unitario"],
    ),
    ("total", &["total", "amount", "importo", "totale"]),
];

fn labels_for(field: &str) -> Vec<String> {
    FIELD_LABELS
        .iter()
        .find(|(f, _)| *f == field)
        .map(|(_, l)| l.iter().map(|s| s.to_string()).collect())
        .unwrap_or_else(|| vec![field.replace('_', " ")])
}

fn content_lines(doc: &str) -> Vec<&str> {
    doc.lines()
        .map(|l| l.trim_start_matches('#').trim())
        .filter(|l| !l.is_empty())
        .collect()
}

fn find_labeled(lines: &[&str], labels: &[String]) -> Option<String> {
    for (i, line) in lines.iter().enumerate() {
        if line.starts_with('|') {
            continue;
        }
        let Some((label, rest)) = line.split_once(':') else {
            continue;
        };
        if !labels.iter().any(|l| l.eq_ignore_ascii_case(label.trim())) {
            continue;
        }
        let rest = rest.trim();
        if !rest.is_empty() {
            return Some(rest.to_string());
        }
        return lines.get(i + 1).map(|s| s.to_string());
    }
    None
}

fn split_row(line: &str) -> Vec<String> {
    let inner = line.trim().trim_start_matches('|').trim_end_matches('|');
    inner
        .split(" | ")
        .map(|c| c.trim().replace("\\|", "|"))
        .collect()
}

fn is_rule(line: &str) -> bool {
    line.chars().all(|c| matches!(c, '|' | '-' | ':' | ' '))
}

/// Reads every pipe table whose header names a description column.
fn read_line_items(lines: &[&str]) -> Option<Value> {
    let mut items = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if !lines[i].starts_with('|') {
            i += 1;
            continue;
        }
        let start = i;
        while i < lines.len() && lines[i].starts_with('|') {
            i += 1;
        }
        let table = &lines[start..i];
        if table.len() < 2 || !is_rule(table[1]) {
            continue;
        }
        let header = split_row(table[0]);
        let column = |key: &str| {
            let names = COLUMN_LABELS.iter().find(|(k, _)| *k == key).unwrap().1;
            header
                .iter()
                .position(|h| names.iter().any(|n| n.eq_ignore_ascii_case(h)))
        };
        let Some(desc) = column("description") else {
            continue;
        };
        let cols: Vec<(&str, Option<usize>)> = ["quantity", "unit_price", "total"]
            .iter()
            .map(|k| (*k, column(k)))
            .collect();
        for row in &table[2..] {
            let cells = split_row(row);
            let mut obj = Map::new();
            obj.insert(
                "description".into(),
                json!(cells.get(desc).cloned().unwrap_or_default()),
            );
            for (key, idx) in &cols {
                if let Some(v) = idx.and_then(|c| cells.get(c)) {
                    obj.insert(key.to_string(), json!(v));
                }
            }
            items.push(Value::Object(obj));
        }
    }
    (!items.is_empty()).then_some(Value::Array(items))
}

/// Reference extractor: reads `Label: value` lines (or a label line followed
/// by its value) and pipe tables out of the prompt's document section.
pub fn read_document(prompt: &str) -> String {
    let doc = document_section(prompt).unwrap_or("");
    let lines = content_lines(doc);
    let mut out = Map::new();
    for (field, kind) in prompt_fields(prompt) {
        let found = if kind == "line_items" {
            read_line_items(&lines)
        } else {
            find_labeled(&lines, &labels_for(&field)).map(Value::String)
        };
        out.insert(
            field,
            match found {
                Some(v) => json!({"value": v, "confidence": READER_CONFIDENCE}),
                None => json!({"value": null, "confidence": 0.0}),
            },
        );
    }
    Value::Object(out).to_string()
}

pub struct ReaderBackend {
    id: String,
}

impl ReaderBackend {
    pub fn new(id: impl Into<String>) -> Self {
        ReaderBackend { id: id.into() }
    }
}

impl Backend for ReaderBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        Ok(read_document(&request.prompt))
    }
}

/// Sidecar file: `{"doc_id": .., "backends": {id: {"v1": answer, "*": answer}}}`.
/// Keys are tried as `v:repair`, `v`, `*:repair`, `*` (repair keys only on
/// the repair attempt). A string answer is returned verbatim, anything else
/// is serialized.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub doc_id: String,
    pub backends: BTreeMap<String, BTreeMap<String, Value>>,
}

pub struct ScriptedBackend {
    id: String,
    fixtures_dir: Option<PathBuf>,
    answers: Mutex<BTreeMap<String, BTreeMap<String, Value>>>,
    unscripted: Unscripted,
    log: Mutex<Vec<(String, VersionId, bool)>>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, unscripted: Unscripted) -> Self {
        ScriptedBackend {
            id: id.into(),
            fixtures_dir: None,
            answers: Mutex::new(BTreeMap::new()),
            unscripted,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fixtures(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fixtures_dir = Some(dir.into());
        self
    }

    /// Registers an answer for `doc_id` under `key` (`v1`, `*`, `v2:repair`, ...).
    pub fn script(&self, doc_id: &str, key: &str, answer: Value) {
        self.answers
            .lock()
            .unwrap()
            .entry(doc_id.to_string())
            .or_default()
            .insert(key.to_string(), answer);
    }

    /// `(doc_id, version, repair)` for every call received.
    pub fn calls(&self) -> Vec<(String, VersionId, bool)> {
        self.log.lock().unwrap().clone()
    }

    fn sidecar_answers(
        &self,
        doc_id: &str,
    ) -> Result<Option<BTreeMap<String, Value>>, BackendError> {
        let Some(dir) = &self.fixtures_dir else {
            return Ok(None);
        };
        let path = dir.join(format!("{doc_id}.json"));
        if !path.exists() {
            return Ok(None);
        }
        let bad = |message: String| BackendError::Sidecar {
            path: path.clone(),
            message,
        };
        let text = std::fs::read_to_string(&path).map_err(|e| bad(e.to_string()))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        Ok(sidecar.backends.get(&self.id).cloned())
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.log.lock().unwrap().push((
            request.doc_id.clone(),
            request.prompt_version,
            request.repair,
        ));
        let in_memory = self.answers.lock().unwrap().get(&request.doc_id).cloned();
        let answers = match in_memory {
            Some(a) => Some(a),
            None => self.sidecar_answers(&request.doc_id)?,
        };
        let v = request.prompt_version.to_string();
        let mut keys = Vec::new();
        if request.repair {
            keys.push(format!("{v}:repair"));
        }
        keys.push(v);
        if request.repair {
            keys.push("*:repair".to_string());
        }
        keys.push("*".to_string());
        let answer = answers
            .as_ref()
            .and_then(|a| keys.iter().find_map(|k| a.get(k)));
        match answer {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Ok(other.to_string()),
            None => match self.unscripted {
                Unscripted::ReadDocument => Ok(read_document(&request.prompt)),
                Unscripted::Absent => Err(BackendError::NoAnswer),
            },
        }
    }
}

/// Chat-completion style adapter: `POST {prompt, max_tokens, temperature}` → `{text}`.
pub struct HttpBackend {
    id: String,
    endpoint: Arc<dyn JsonEndpoint>,
    retry: RetryPolicy,
    timeout: Duration,
}

impl HttpBackend {
    pub fn new(
        id: impl Into<String>,
        endpoint: Arc<dyn JsonEndpoint>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Self {
        HttpBackend {
            id: id.into(),
            endpoint,
            retry,
            timeout,
        }
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn timeout(&self) -> Duration {
        self.timeout
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = json!({
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let response = self.retry.run(|| self.endpoint.post_json(&body))?;
        Ok(match response.get("text") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => response.to_string(),
        })
    }
}

/// Instantiates the configured backend registry.
pub fn build_backends(configs: &[BackendConfig], retry: &RetrySettings) -> Vec<Arc<dyn Backend>> {
    configs
        .iter()
        .map(|c| -> Arc<dyn Backend> {
            match c.kind {
                BackendKind::Reader => Arc::new(ReaderBackend::new(&c.backend_id)),
                BackendKind::Scripted => {
                    let b = ScriptedBackend::new(&c.backend_id, c.unscripted);
                    Arc::new(match &c.fixtures_dir {
                        Some(dir) => b.with_fixtures(dir),
                        None => b,
                    })
                }
                BackendKind::Http => {
                    let timeout = Duration::from_millis(c.timeout_ms);
                    let url = c.endpoint.clone().unwrap_or_default();
                    Arc::new(HttpBackend::new(
                        &c.backend_id,
                        Arc::new(HttpEndpoint::new(url, timeout)),
                        RetryPolicy::from(retry),
                        timeout,
                    ))
                }
            }
        })
        .collect()
}
