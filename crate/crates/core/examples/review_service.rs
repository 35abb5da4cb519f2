//! Serves the review API over a processed corpus and drives it with a
//! small HTTP client: list the queue, correct one document, confirm
//! another, read the stats.
//!
//! Pass `--serve` to keep the server running on 127.0.0.1:8080 instead.

use std::sync::{Arc, Mutex};

use madp::eval::{run_eval, EvalOptions};
use madp::fixtures::{generate, DEFAULT_SEED};
use madp::service::{router, REVIEWER_HEADER};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(DEFAULT_SEED);
    // Leave the review tasks open for the client below.
    let options = EvalOptions {
        hitl: false,
        ..EvalOptions::full()
    };
    let (_, engine) = run_eval(&corpus, &options)?;

    let rt = tokio::runtime::Runtime::new()?;
    if std::env::args().any(|a| a == "--serve") {
        return Ok(rt.block_on(madp::service::serve(engine, "127.0.0.1:8080".parse()?))?);
    }
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    let app = router(Arc::new(Mutex::new(engine)));
    rt.spawn(async move { axum::serve(listener, app).await });

    let queue: Value = ureq::get(format!("{base}/queue?status=pending"))
        .call()?
        .body_mut()
        .read_json()?;
    let tasks = queue.as_array().cloned().unwrap_or_default();
    println!("{} pending reviews", tasks.len());
    for t in tasks.iter().take(3) {
        println!("  {} {}", t["doc_id"], t["reasons"]);
    }

    let first = tasks[0]["doc_id"].as_str().unwrap_or_default();
    let doc: Value = ureq::get(format!("{base}/documents/{first}"))
        .call()?
        .body_mut()
        .read_json()?;
    let flagged: Vec<&str> = doc["flagged_fields"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .collect();
    println!("{first} flags {flagged:?}");
    // Fields that were read correctly answer 422: nothing to correct.
    for field in flagged {
        let truth = corpus
            .truth(first)
            .and_then(|t| t.fields.get(field).cloned().flatten());
        let mut resp = ureq::post(format!("{base}/documents/{first}/corrections"))
            .config()
            .http_status_as_error(false)
            .build()
            .header(REVIEWER_HEADER, "alice")
            .send_json(json!({"field": field, "value": truth}))?;
        let body: Value = resp.body_mut().read_json()?;
        if resp.status().is_success() {
            println!(
                "  {field} -> {truth:?}: {} inherited by {}",
                body["feedback_id"], body["inherited"]
            );
            break;
        }
        println!("  {field}: HTTP {} {}", resp.status(), body["message"]);
    }

    if let Some(second) = tasks
        .iter()
        .filter_map(|t| t["doc_id"].as_str())
        .find(|id| *id != first)
    {
        let status = ureq::post(format!("{base}/documents/{second}/confirm"))
            .header(REVIEWER_HEADER, "bob")
            .send_json(json!({"review_seconds": 45}))?
            .status();
        println!("confirmed {second}: HTTP {status}");
    }

    let mut missing = ureq::get(format!("{base}/documents/nope"))
        .config()
        .http_status_as_error(false)
        .build()
        .call()?;
    println!(
        "unknown document: HTTP {} {}",
        missing.status(),
        missing.body_mut().read_to_string()?
    );

    let stats: Value = ureq::get(format!("{base}/stats"))
        .call()?
        .body_mut()
        .read_json()?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
