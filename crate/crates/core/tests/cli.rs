use std::path::Path;
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use madp::service::router;
use madp::workspace::Workspace;

fn madp(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_madp"))
        .arg("--data")
        .arg(data)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MADP_CONFIG")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn sustain_prints_the_scenario_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&madp(dir.path(), &["sustain", "--scenario", "ai_hitl"]));
    assert!(
        text.starts_with("ai_hitl: 5.4 t / 15.2 MWh / 37.6 m³"),
        "{text}"
    );
    let json: Value = serde_json::from_str(&ok(&madp(
        dir.path(),
        &["sustain", "--scenario", "manual", "--json"],
    )))
    .unwrap();
    assert_eq!(json["display"]["co2_tons"], 17.7);
    let all = ok(&madp(dir.path(), &["sustain"]));
    assert!(
        all.contains("manual") && all.contains("pure_ai") && all.contains("ai_hitl"),
        "{all}"
    );
    let bad = madp(dir.path(), &["sustain", "--scenario", "nope"]);
    assert!(!bad.status.success());
}

#[test]
fn run_on_an_empty_workspace_does_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let stats: Value = serde_json::from_str(&ok(&madp(dir.path(), &["run"]))).unwrap();
    assert_eq!(stats["total_docs"], 0);
    let queue: Value = serde_json::from_str(&ok(&madp(dir.path(), &["queue", "ls"]))).unwrap();
    assert_eq!(queue, Value::Array(Vec::new()));
}

#[test]
fn unknown_ablation_stage_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = madp(dir.path(), &["eval", "corpus", "--ablate", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn ablating_the_parser_lowers_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let data = dir.path().join("data");
    ok(&madp(&data, &["fixtures", corpus.to_str().unwrap()]));
    let eval = |extra: &[&str]| -> Value {
        let mut args = vec!["eval", corpus.to_str().unwrap(), "--json"];
        args.extend_from_slice(extra);
        serde_json::from_str(&ok(&madp(&data, &args))).unwrap()
    };
    let full = eval(&[]);
    let ablated = eval(&["--ablate", "parser"]);
    assert_eq!(full["documents"], 100);
    assert_eq!(ablated["ablated"], serde_json::json!(["parser"]));
    assert!(
        ablated["doc_accuracy"].as_f64().unwrap() < full["doc_accuracy"].as_f64().unwrap(),
        "{} vs {}",
        ablated["doc_accuracy"],
        full["doc_accuracy"]
    );
}

#[tokio::test]
async fn queue_ls_matches_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let data = dir.path().join("data");
    let corpus_arg = corpus.to_str().unwrap();
    ok(&madp(&data, &["fixtures", corpus_arg]));
    std::fs::create_dir_all(&data).unwrap();
    std::fs::copy(corpus.join("config.json"), data.join("config.json")).unwrap();
    assert!(ok(&madp(&data, &["train", corpus_arg])).contains("signatures"));
    assert!(ok(&madp(&data, &["ingest", corpus_arg])).contains("ingested"));
    let stats: Value = serde_json::from_str(&ok(&madp(&data, &["run"]))).unwrap();
    assert!(stats["in_review"].as_u64().unwrap() > 0);
    // A second ingest of the same bundles is a no-op.
    assert!(ok(&madp(&data, &["ingest", corpus_arg])).contains("0 bundles"));

    let cli: Value = serde_json::from_str(&ok(&madp(&data, &["queue", "ls"]))).unwrap();
    let engine = Workspace::open(&data, None).unwrap().engine().unwrap();
    let app = router(Arc::new(Mutex::new(engine)));
    let resp = app
        .oneshot(Request::get("/queue").body(Body::empty()).unwrap())
        .await
        .unwrap();
    let served: Value =
        serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(cli, served);
    let pending: Value =
        serde_json::from_str(&ok(&madp(&data, &["queue", "ls", "--status", "pending"]))).unwrap();
    assert_eq!(
        pending.as_array().unwrap().len(),
        stats["in_review"].as_u64().unwrap() as usize
    );
}
