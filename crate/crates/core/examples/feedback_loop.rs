//! The prompt feedback loop end to end.
//!
//! Two invoices from the same supplier arrive with a shaky invoice number.
//! A reviewer fixes the first one; the correction becomes prompt v2, and the
//! second invoice is re-extracted under v2 and accepted with no human touch.
//! A third invoice from another supplier is left alone.

use std::sync::Arc;

use madp::config::{PipelineConfig, Unscripted};
use madp::engine::{Engine, Pipeline};
use madp::eval::GroundTruth;
use madp::events::EventLog;
use madp::extract::{Backend, ScriptedBackend};
use madp::fixtures::{generate, DEFAULT_SEED};
use serde_json::{json, Map, Value};

fn answer(truth: &GroundTruth, number: &str, confidence: f64) -> Value {
    let mut obj = Map::new();
    for (field, value) in &truth.fields {
        obj.insert(field.clone(), json!({"value": value, "confidence": 0.95}));
    }
    obj.insert(
        "invoice_number".into(),
        json!({"value": number, "confidence": confidence}),
    );
    Value::Object(obj)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(DEFAULT_SEED);
    let (a, b, c) = ("c01-4", "c01-3", "c02-4");
    let truth = |id: &str| corpus.truth(id).expect("labeled").clone();
    let number = |id: &str| {
        truth(id).fields["invoice_number"]
            .clone()
            .expect("has a number")
    };

    let backend = Arc::new(ScriptedBackend::new("model", Unscripted::Absent));
    backend.script(a, "v1", answer(&truth(a), "RF-2026-9999", 0.6));
    backend.script(b, "v1", answer(&truth(b), &number(b), 0.6));
    backend.script(b, "v2", answer(&truth(b), &number(b), 0.95));
    backend.script(c, "*", answer(&truth(c), &number(c), 0.6));

    let config = PipelineConfig::default();
    let signatures = corpus.train(&config)?;
    let backends: Vec<Arc<dyn Backend>> = vec![backend.clone()];
    let pipeline = Pipeline::from_config(config, signatures).with_backends(backends);
    let mut engine = Engine::new(pipeline, EventLog::in_memory())?;
    for id in [a, b, c] {
        engine.ingest(corpus.unit_bundle(id).expect("bundle"))?;
    }
    engine.run_all(2)?;
    for t in engine.store().queue(None) {
        println!("review {:<6} {}", t.doc_id, t.reasons.join("; "));
    }

    let fix = engine.correct(a, "invoice_number", &number(a), "alice")?;
    println!(
        "\n{} by alice, re-extracted {:?}",
        fix.feedback_id, fix.inherited
    );

    let category = engine.store().doc(a).expect("doc").category();
    for v in engine.store().prompts.versions(&category) {
        println!(
            "{} {} parent {:?} examples {}",
            category,
            v.version_id,
            v.parent_version.map(|p| p.to_string()),
            v.examples.len()
        );
    }
    for id in [a, b, c] {
        let d = engine.store().doc(id).expect("doc");
        let resolution = d.task.as_ref().and_then(|t| t.resolution);
        println!(
            "{id}: {} human actions {} resolution {:?}",
            d.state, d.human_actions, resolution
        );
    }
    println!("backend calls: {:?}", backend.calls());
    Ok(())
}
