//! Prompts two backends for the same invoice and merges their answers.
//!
//! `reader` reads values straight out of the prompt's document section;
//! `sloppy` is scripted to agree on everything except the total.

use madp::config::Unscripted;
use madp::extract::{assemble_prompt, consensus, extract, PromptVersion, ScriptedBackend};
use madp::fixtures::{generate, DEFAULT_SEED};
use madp::parse::{render_markdown, ParserConfig};
use serde_json::{json, Map, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(DEFAULT_SEED);
    let doc_id = "c06-1";
    let truth = corpus.truth(doc_id).expect("labeled");
    let schema = truth.schema()?;
    let bundle = corpus.unit_bundle(doc_id).expect("bundle");
    let parsed = render_markdown(doc_id, &bundle.pages, &ParserConfig::default());
    let prompt = assemble_prompt(
        &schema,
        &parsed,
        &PromptVersion::initial(truth.category.clone()),
        3,
    )?;
    println!(
        "prompt {} for {}, {} chars",
        prompt.version_id,
        prompt.category,
        prompt.rendered_text.len()
    );

    let reader = ScriptedBackend::new("reader", Unscripted::ReadDocument);
    let sloppy = ScriptedBackend::new("sloppy", Unscripted::Absent);
    let mut answer = Map::new();
    for (field, value) in &truth.fields {
        answer.insert(field.clone(), json!({"value": value, "confidence": 0.8}));
    }
    answer.insert(
        "total_amount".into(),
        json!({"value": "9999.99", "confidence": 0.9}),
    );
    sloppy.script(doc_id, "*", Value::Object(answer));

    let results = vec![
        ("reader".to_string(), extract(&prompt, &reader, doc_id)?),
        ("sloppy".to_string(), extract(&prompt, &sloppy, doc_id)?),
    ];
    for rec in consensus(&results, &schema)? {
        println!(
            "{:<16} {:<10} {}{:<24} {:.3} from {}",
            rec.field,
            format!("{:?}", rec.agreement),
            if rec.flagged { "! " } else { "  " },
            rec.chosen.normalized.display(),
            rec.chosen.confidence,
            rec.chosen.backend_id
        );
    }
    Ok(())
}
