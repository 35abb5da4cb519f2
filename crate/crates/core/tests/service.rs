mod common;

use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use madp::events::{read_events, EventLog, EventPayload};
use madp::service::{router, REVIEWER_HEADER};

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, reviewer: Option<&str>, body: &str) -> (StatusCode, Value) {
    let mut req = Request::post(uri).header("content-type", "application/json");
    if let Some(r) = reviewer {
        req = req.header(REVIEWER_HEADER, r);
    }
    send(app, req.body(Body::from(body.to_string())).unwrap()).await
}

/// Scenario engine run to the review stage, served from a file log.
fn reviewed_app(dir: &tempfile::TempDir) -> (Router, common::Scenario, std::path::PathBuf) {
    let path = dir.path().join("events.jsonl");
    let s = common::scenario();
    let mut engine = s.engine(common::file_log(&path));
    engine.run_all(2).unwrap();
    (router(Arc::new(Mutex::new(engine))), s, path)
}

#[tokio::test]
async fn empty_engine_serves_empty_views() {
    let s = common::scenario();
    let app = router(Arc::new(Mutex::new(s.bare_engine(EventLog::in_memory()))));
    let (st, queue) = get(&app, "/queue").await;
    assert_eq!((st, queue), (StatusCode::OK, json!([])));
    let (st, stats) = get(&app, "/stats").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(stats["total_docs"], 0);
    assert_eq!(stats["automation_rate"], Value::Null);
    assert_eq!(stats["review_rate"], Value::Null);
}

#[tokio::test]
async fn queue_filters_by_status() {
    let dir = tempfile::tempdir().unwrap();
    let (app, s, _) = reviewed_app(&dir);
    let (_, all) = get(&app, "/queue").await;
    let ids: Vec<&str> = all
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["doc_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 3);
    for id in [s.a, s.b, s.c] {
        assert!(ids.contains(&id), "{id} missing from {ids:?}");
    }
    let (_, pending) = get(&app, "/queue?status=pending").await;
    assert_eq!(pending.as_array().unwrap().len(), 3);
    let (_, resolved) = get(&app, "/queue?status=resolved").await;
    assert_eq!(resolved, json!([]));
    let (st, err) = get(&app, "/queue?status=bogus").await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad_request");
}

#[tokio::test]
async fn document_view_includes_the_review() {
    let dir = tempfile::tempdir().unwrap();
    let (app, s, _) = reviewed_app(&dir);
    let (st, doc) = get(&app, &format!("/documents/{}", s.a)).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(doc["doc_id"], s.a);
    assert_eq!(doc["state"], "in_review");
    assert_eq!(doc["review"]["status"], "pending");
    let flagged = doc["review"]["flagged_fields"].as_array().unwrap();
    assert!(flagged.contains(&json!("invoice_number")));
    assert!(doc["review"]["markdown"]
        .as_str()
        .is_some_and(|m| !m.is_empty()));

    let (st, err) = get(&app, "/documents/nope").await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
}

#[tokio::test]
async fn correction_records_feedback_and_inherits() {
    let dir = tempfile::tempdir().unwrap();
    let (app, s, path) = reviewed_app(&dir);
    let body = json!({"field": "invoice_number", "value": s.true_number(s.a)}).to_string();
    let (st, c) = post(
        &app,
        &format!("/documents/{}/corrections", s.a),
        Some("alice"),
        &body,
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{c}");
    assert_eq!(c["status"], "resolved");
    assert_eq!(c["inherited"], json!([s.b]));
    let feedback_id = c["feedback_id"].as_str().unwrap().to_string();

    let events = read_events(&path).unwrap();
    let fb_pos = events
        .iter()
        .position(|e| matches!(&e.payload, EventPayload::FeedbackRecorded { feedback, .. } if feedback.feedback_id == feedback_id && feedback.reviewer_id == "alice"))
        .expect("feedback event");
    let corrected_pos = events
        .iter()
        .position(|e| matches!(&e.payload, EventPayload::Corrected { feedback_id: f, .. } if *f == feedback_id))
        .expect("corrected event");
    assert!(fb_pos < corrected_pos);

    let (_, b) = get(&app, &format!("/documents/{}", s.b)).await;
    assert_eq!(b["state"], "accepted");
    assert_eq!(b["human_actions"], 0);
    let (_, cdoc) = get(&app, &format!("/documents/{}", s.c)).await;
    assert_eq!(cdoc["state"], "in_review");

    let category = common::truth(&s.corpus, s.a).category.key();
    let (st, versions) = get(&app, &format!("/prompts/{category}/versions")).await;
    assert_eq!(st, StatusCode::OK);
    let versions = versions.as_array().unwrap();
    assert_eq!(versions.len(), 2);
    assert_eq!(versions[1]["parent_version"], versions[0]["version_id"]);
    assert_eq!(versions[1]["created_from"], json!([feedback_id]));

    // The task is closed now.
    let (st, err) = post(
        &app,
        &format!("/documents/{}/corrections", s.a),
        Some("alice"),
        &body,
    )
    .await;
    assert_eq!(
        (st, err["code"].as_str()),
        (StatusCode::CONFLICT, Some("conflict"))
    );
}

#[tokio::test]
async fn invalid_corrections_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (app, s, path) = reviewed_app(&dir);
    let before = read_events(&path).unwrap().len();
    let uri = format!("/documents/{}/corrections", s.c);
    let same = json!({"field": "invoice_number", "value": s.true_number(s.c)}).to_string();
    let cases = [
        (same.as_str(), StatusCode::UNPROCESSABLE_ENTITY),
        (
            r#"{"field": "colour", "value": "red"}"#,
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            r#"{"field": "invoice_date", "value": "not a date"}"#,
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (r#"{"field": "invoice_number"}"#, StatusCode::BAD_REQUEST),
        (r#"{"value": "X"}"#, StatusCode::BAD_REQUEST),
        ("{not json", StatusCode::BAD_REQUEST),
    ];
    for (body, want) in cases {
        let (st, err) = post(&app, &uri, Some("bob"), body).await;
        assert_eq!(st, want, "{body}: {err}");
        assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    let (st, _) = post(
        &app,
        "/documents/nope/corrections",
        None,
        r#"{"field":"invoice_number","value":"X"}"#,
    )
    .await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(
        read_events(&path).unwrap().len(),
        before,
        "rejected requests must not append events"
    );
}

#[tokio::test]
async fn non_string_values_and_anonymous_reviewers() {
    let dir = tempfile::tempdir().unwrap();
    let (app, s, path) = reviewed_app(&dir);
    let (st, c) = post(
        &app,
        &format!("/documents/{}/corrections", s.c),
        None,
        r#"{"field": "total_amount", "value": 12345.5}"#,
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{c}");
    let events = read_events(&path).unwrap();
    let fb = events
        .iter()
        .find_map(|e| match &e.payload {
            EventPayload::FeedbackRecorded { feedback, .. } => Some(feedback.clone()),
            _ => None,
        })
        .unwrap();
    assert_eq!(fb.reviewer_id, "anonymous");
    assert_eq!(fb.corrected_value, "12345.5");
}

#[tokio::test]
async fn confirm_closes_the_task_once() {
    let dir = tempfile::tempdir().unwrap();
    let (app, s, path) = reviewed_app(&dir);
    let uri = format!("/documents/{}/confirm", s.c);
    let (st, task) = post(&app, &uri, Some("carol"), r#"{"review_seconds": 30}"#).await;
    assert_eq!(st, StatusCode::OK, "{task}");
    assert_eq!(task["status"], "resolved");
    assert_eq!(task["state"], "accepted");
    for f in task["fields"].as_array().unwrap() {
        if f["normalized"] != json!("missing") {
            assert_eq!(f["confidence"], 1.0, "{f}");
        }
    }
    let (st, err) = post(&app, &uri, Some("carol"), "").await;
    assert_eq!(
        (st, err["code"].as_str()),
        (StatusCode::CONFLICT, Some("conflict"))
    );

    // An empty body is accepted; a negative duration is not.
    let (st, _) = post(
        &app,
        &format!("/documents/{}/confirm", s.b),
        Some("carol"),
        r#"{"review_seconds": -1}"#,
    )
    .await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = post(&app, &format!("/documents/{}/confirm", s.b), None, "").await;
    assert_eq!(st, StatusCode::OK);

    let (_, stats) = get(&app, "/stats").await;
    assert_eq!(
        (stats["reviewed_docs"].as_u64(), stats["in_review"].as_u64()),
        (Some(3), Some(1))
    );
    let (_, b) = get(&app, &format!("/documents/{}", s.b)).await;
    let b_seconds = b["task"]["review_seconds"].as_f64().unwrap();
    assert_eq!(
        stats["avg_review_seconds"].as_f64(),
        Some((30.0 + b_seconds) / 2.0)
    );
    let confirmed = read_events(&path)
        .unwrap()
        .iter()
        .filter(|e| matches!(e.payload, EventPayload::Confirmed { .. }))
        .count();
    assert_eq!(confirmed, 2);
}

#[tokio::test]
async fn prompt_versions_for_an_untouched_category() {
    let dir = tempfile::tempdir().unwrap();
    let (app, s, _) = reviewed_app(&dir);
    let category = common::truth(&s.corpus, s.c).category.key();
    let (st, versions) = get(&app, &format!("/prompts/{category}/versions")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(versions.as_array().unwrap().len(), 1);
    assert_eq!(versions[0]["parent_version"], Value::Null);
    let (st, _) = get(&app, "/prompts/no-separator/versions").await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sustainability_reports() {
    let s = common::scenario();
    let app = router(Arc::new(Mutex::new(s.bare_engine(EventLog::in_memory()))));
    let (st, r) = get(&app, "/sustainability/report?scenario=ai_hitl").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(r["display"]["co2_tons"], 5.4);
    assert_eq!(r["display"]["energy_mwh"], 15.2);
    assert_eq!(r["display"]["water_m3"], 37.6);
    let (st, all) = get(&app, "/sustainability/report").await;
    assert_eq!(st, StatusCode::OK);
    assert!(all.is_object());
    let (st, err) = get(&app, "/sustainability/report?scenario=bogus").await;
    assert_eq!(
        (st, err["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("bad_request"))
    );
}

#[tokio::test]
async fn unknown_routes_answer_json() {
    let s = common::scenario();
    let app = router(Arc::new(Mutex::new(s.bare_engine(EventLog::in_memory()))));
    let (st, err) = get(&app, "/nowhere").await;
    assert_eq!(
        (st, err["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("not_found"))
    );
}
