mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fraktur::entry::SchemaId;
use fraktur::server::{router, AppState};
use fraktur::synth::PageSpec;

use common::Fixture;

fn app(fx: &Fixture) -> Router {
    let store = fraktur::jobs::JobStore::open(fx.store.root()).unwrap();
    router(Arc::new(AppState { store, runtime: fx.runtime(), prices: None }))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn upload(fx: &Fixture) -> Value {
    let pages: Vec<Value> = fx
        .layout
        .scans
        .iter()
        .map(|p| {
            json!({
                "file_name": p.file_name().unwrap().to_string_lossy(),
                "data_base64": base64::engine::general_purpose::STANDARD.encode(std::fs::read(p).unwrap()),
            })
        })
        .collect();
    json!({"job_id": "api", "pages": pages})
}

fn small() -> Fixture {
    Fixture::new(&[PageSpec::new("s001", 10, 0), PageSpec::new("s002", 10, 2)], SchemaId::TeiSubset)
}

async fn recognise(app: &Router, page: u32) -> Value {
    let mut last = Value::Null;
    for _ in 0..4 {
        let (status, body) = call_json(app, "POST", &format!("/api/jobs/api/pages/{page}/advance"), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        last = body;
    }
    last
}

#[tokio::test]
async fn review_flow_edit_save_approve_export() {
    let fx = small();
    let app = app(&fx);
    let (status, job) = call_json(&app, "POST", "/api/jobs", Some(upload(&fx))).await;
    assert_eq!(status, StatusCode::CREATED, "{job}");
    assert_eq!(job["pages"].as_array().unwrap().len(), 2);

    assert_eq!(recognise(&app, 1).await["state"], "recognized");

    let (status, page) = call_json(&app, "GET", "/api/jobs/api/pages/1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page["tile_urls"].as_array().unwrap().len(), 8);
    let tile_url = page["tile_urls"][0].as_str().unwrap().to_string();
    let (status, png) = call(&app, "GET", &tile_url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");

    let mut entries = page["content"]["content"]["entries"].clone();
    assert_eq!(entries.as_array().unwrap().len(), 10);
    entries[0]["orth"] = json!("Korrigeeritud");
    let (status, reply) = call_json(&app, "PUT", "/api/jobs/api/pages/1/entries", Some(entries)).await;
    assert_eq!(status, StatusCode::OK, "{reply}");
    assert_eq!(reply["state"], "in_review");

    let (status, reply) = call_json(&app, "POST", "/api/jobs/api/pages/1/approve", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["state"], "approved");

    let (status, err) = call_json(&app, "POST", "/api/jobs/api/pages/1/approve", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "illegal_transition");

    let (status, csv) = call(&app, "GET", "/api/jobs/api/export?format=csv", None).await;
    assert_eq!(status, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.starts_with("# coverage: 1 of 2 pages"), "{csv}");
    assert!(csv.contains("Korrigeeritud"));

    let (status, tei) = call(&app, "GET", "/api/jobs/api/export?format=tei", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(tei).unwrap().contains("<orth>Korrigeeritud</orth>"));
}

#[tokio::test]
async fn errors_carry_codes_and_statuses() {
    let fx = small();
    let app = app(&fx);
    let (status, err) = call_json(&app, "GET", "/api/jobs/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "unknown_job");

    let (status, err) = call_json(&app, "POST", "/api/jobs", Some(json!({"pages": 3}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "invalid_body");

    call_json(&app, "POST", "/api/jobs", Some(upload(&fx))).await;
    let (status, _) = call_json(&app, "POST", "/api/jobs", Some(upload(&fx))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = call_json(&app, "GET", "/api/jobs/api/pages/9", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "GET", "/api/jobs/api/tiles/../manifest.json", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // corrections before recognition are refused
    let (status, err) = call_json(&app, "PUT", "/api/jobs/api/pages/2/entries", Some(json!([]))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{err}");

    recognise(&app, 2).await;
    let bad = json!([{"id": "a", "orth": " "}, {"id": "a", "orth": "x"}]);
    let (status, err) = call_json(&app, "PUT", "/api/jobs/api/pages/2/entries", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "validation_failed");
    assert_eq!(err["violations"].as_array().unwrap().len(), 2);

    let (status, err) = call_json(&app, "GET", "/api/jobs/api/export?format=pdf", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
    let (status, _) = call_json(&app, "GET", "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn listing_report_and_retry() {
    let fx = small();
    let app = app(&fx);
    call_json(&app, "POST", "/api/jobs", Some(upload(&fx))).await;
    let (_, list) = call_json(&app, "GET", "/api/jobs", None).await;
    assert_eq!(list[0]["job_id"], "api");

    let (status, err) = call_json(&app, "POST", "/api/jobs/api/pages/1/retry", None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{err}");

    let (status, err) = call_json(&app, "GET", "/api/jobs/api/report", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{err}");

    let store = fraktur::jobs::JobStore::open(fx.store.root()).unwrap();
    let mut cfg = store.load("api").unwrap().config;
    cfg.reference_dir = Some(fx.layout.reference.clone());
    std::fs::remove_dir_all(store.job_dir("api")).unwrap();
    let scans = fx.layout.scans.iter().map(|p| fraktur::jobs::ScanInput::from_path(p).unwrap()).collect();
    store.create_job(Some("api"), scans, cfg).unwrap();
    recognise(&app, 1).await;
    let (status, report) = call_json(&app, "GET", "/api/jobs/api/report", None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["pages"][0]["page_id"], "s001");
    assert_eq!(report["pages"][0]["perfect_entries"], 10);
}
