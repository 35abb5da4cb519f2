#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use madp::config::{PipelineConfig, Unscripted};
use madp::engine::{Engine, Pipeline};
use madp::eval::{Corpus, GroundTruth};
use madp::events::{EventLog, SteppingClock};
use madp::extract::{Backend, ScriptedBackend};
use madp::fixtures::{generate, DEFAULT_SEED};
use madp::model::DocBundle;

pub const BACKEND: &str = "scripted";

pub fn corpus() -> Corpus {
    generate(DEFAULT_SEED)
}

pub fn bundle(corpus: &Corpus, doc_id: &str) -> DocBundle {
    corpus
        .unit_bundle(doc_id)
        .unwrap_or_else(|| panic!("no bundle {doc_id}"))
}

pub fn truth<'a>(corpus: &'a Corpus, doc_id: &str) -> &'a GroundTruth {
    corpus
        .truth(doc_id)
        .unwrap_or_else(|| panic!("no truth {doc_id}"))
}

/// Backend answer built from the truth, with `(field, raw, confidence)`
/// overrides. Unlisted fields get 0.95.
pub fn answer(truth: &GroundTruth, overrides: &[(&str, &str, f64)]) -> Value {
    let mut obj = Map::new();
    for (k, v) in &truth.fields {
        let entry = match v {
            Some(raw) => json!({"value": raw, "confidence": 0.95}),
            None => json!({"value": null, "confidence": 0.0}),
        };
        obj.insert(k.clone(), entry);
    }
    for (k, raw, conf) in overrides {
        obj.insert(k.to_string(), json!({"value": raw, "confidence": conf}));
    }
    Value::Object(obj)
}

/// Engine over `log` with signatures trained on the whole corpus and the
/// given scripted backend.
pub fn engine(corpus: &Corpus, backend: Arc<ScriptedBackend>, log: EventLog) -> Engine {
    let config = PipelineConfig::default();
    let sigs = corpus.train(&config).unwrap();
    let backends: Vec<Arc<dyn Backend>> = vec![backend];
    let pipeline = Pipeline::from_config(config, sigs).with_backends(backends);
    Engine::new(pipeline, log)
        .unwrap()
        .with_clock(Arc::new(SteppingClock::fixed()))
}

pub fn scripted() -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new(BACKEND, Unscripted::Absent))
}

pub fn file_log(path: &Path) -> EventLog {
    EventLog::open(path).unwrap()
}

/// Learning-loop scenario: A and B share a category and both arrive with a
/// low-confidence invoice number (A's is also wrong); C belongs to another
/// category. B answers confidently under prompt v2.
pub struct Scenario {
    pub corpus: Corpus,
    pub a: &'static str,
    pub b: &'static str,
    pub c: &'static str,
    pub backend: Arc<ScriptedBackend>,
}

pub fn scenario() -> Scenario {
    let corpus = corpus();
    let (a, b, c) = ("c01-4", "c01-3", "c02-4");
    let backend = scripted();
    let ta = truth(&corpus, a);
    backend.script(
        a,
        "v1",
        answer(ta, &[("invoice_number", "RF-2026-9999", 0.6)]),
    );
    let tb = truth(&corpus, b);
    let number_b = tb.fields["invoice_number"].clone().unwrap();
    backend.script(b, "v1", answer(tb, &[("invoice_number", &number_b, 0.6)]));
    backend.script(b, "v2", answer(tb, &[]));
    let tc = truth(&corpus, c);
    let number_c = tc.fields["invoice_number"].clone().unwrap();
    backend.script(c, "*", answer(tc, &[("invoice_number", &number_c, 0.6)]));
    Scenario {
        corpus,
        a,
        b,
        c,
        backend,
    }
}

impl Scenario {
    pub fn bare_engine(&self, log: EventLog) -> Engine {
        engine(&self.corpus, self.backend.clone(), log)
    }

    pub fn ingest(&self, e: &mut Engine) {
        for id in [self.a, self.b, self.c] {
            if e.store().doc(id).is_none() {
                e.ingest(bundle(&self.corpus, id)).unwrap();
            }
        }
    }

    pub fn engine(&self, log: EventLog) -> Engine {
        let mut e = self.bare_engine(log);
        self.ingest(&mut e);
        e
    }

    pub fn true_number(&self, doc_id: &str) -> String {
        truth(&self.corpus, doc_id).fields["invoice_number"]
            .clone()
            .unwrap()
    }
}
