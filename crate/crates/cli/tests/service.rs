use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hadith_corpus::evaluate::{build_report, ErrorCount, ErrorDimension, EvaluationAspect, EvaluationRecord};
use hadith_corpus::pipeline::{run_pipeline, PipelineConfig, StoreName};
use hadith_corpus::store::{RecordKind, RecordStore};
use hadith_corpus::synthetic::{generate, SyntheticConfig};
use hadith_corpus_cli::service::{router, ServiceState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn app(evaluations: &Path) -> Router {
    let state = ServiceState::new(RecordStore::open(evaluations).unwrap(), None, None, 0, 0).unwrap();
    router(Arc::new(state))
}

fn record(narration: &str, evaluator: &str) -> EvaluationRecord {
    let mut r = EvaluationRecord::new(narration, evaluator);
    for (i, a) in EvaluationAspect::ALL.into_iter().enumerate() {
        r.aspect_scores.insert(a, 6.0 + (i % 4) as f64);
    }
    r.error_counts.insert(ErrorDimension::Translation, ErrorCount::new(1, 8));
    r.error_counts.insert(ErrorDimension::KeyPhrases, ErrorCount::new(2, 5));
    r
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, body)
}

fn post(body: impl Into<Body>, key: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/api/v1/evaluations").header("content-type", "application/json");
    if let Some(k) = key {
        b = b.header("Idempotency-Key", k);
    }
    b.body(body.into()).unwrap()
}

fn post_record(r: &EvaluationRecord, key: Option<&str>) -> Request<Body> {
    post(serde_json::to_vec(r).unwrap(), key)
}

async fn report(app: &Router) -> Value {
    let (status, body) = send(app, Request::get("/api/v1/report").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    body
}

#[tokio::test]
async fn submission_is_visible_in_next_report() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("evaluations.jsonl"));
    let before = report(&app).await["sample_size"].as_u64().unwrap();
    let (status, _) = send(&app, post_record(&record("n1", "e1"), None)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(report(&app).await["sample_size"].as_u64().unwrap(), before + 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_submissions_match_sequential_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("evaluations.jsonl"));
    let records: Vec<EvaluationRecord> = (0..50).map(|i| record(&format!("n{i:02}"), &format!("e{}", i % 3))).collect();

    let handles: Vec<_> = records
        .iter()
        .map(|r| {
            let (app, req) = (app.clone(), post_record(r, None));
            tokio::spawn(async move { send(&app, req).await.0 })
        })
        .collect();
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::CREATED);
    }

    let live = report(&app).await;
    assert_eq!(live["sample_size"].as_u64(), Some(50));
    let oracle = serde_json::to_value(build_report(&records)).unwrap();
    assert_eq!(live, oracle);

    let reopened = RecordStore::open_existing(dir.path().join("evaluations.jsonl")).unwrap();
    assert_eq!(reopened.count(RecordKind::Evaluation), 50);
}

#[tokio::test]
async fn out_of_range_score_rejected_with_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("evaluations.jsonl"));
    let mut r = record("n1", "e1");
    r.aspect_scores.insert(EvaluationAspect::Summarization, 11.0);
    let (status, body) = send(&app, post_record(&r, None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["invariant"], "scores within [0,10]");
    assert_eq!(report(&app).await["sample_size"].as_u64(), Some(0));
}

#[tokio::test]
async fn malformed_body_is_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("evaluations.jsonl"));
    let (status, body) = send(&app, post("{\"narration_id\": 3", None)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("malformed"));
    let (status, _) = send(&app, post("{\"narration_id\":\"n\",\"evaluator_id\":\"e\",\"bogus\":1}", None)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn root_cause_links_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("evaluations.jsonl");
    let app = app(&path);
    let mut r = record("n7", "e1");
    r.root_cause_links.insert(ErrorDimension::KeyPhrases, ErrorDimension::Translation);
    let (status, _) = send(&app, post_record(&r, None)).await;
    assert_eq!(status, StatusCode::CREATED);
    let stored = RecordStore::open_existing(&path).unwrap().evaluations().unwrap();
    assert_eq!(stored, vec![r]);
}

#[tokio::test]
async fn idempotency_key_records_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("evaluations.jsonl");
    let app = app(&path);
    let r = record("n1", "e1");
    let (first, _) = send(&app, post_record(&r, Some("k-1"))).await;
    let (second, body) = send(&app, post_record(&r, Some("k-1"))).await;
    assert_eq!(first, StatusCode::CREATED);
    assert_eq!(second, StatusCode::OK);
    assert_eq!(body["duplicate"], true);

    let (conflict, _) = send(&app, post_record(&record("n2", "e1"), Some("k-1"))).await;
    assert_eq!(conflict, StatusCode::CONFLICT);

    let store = RecordStore::open_existing(&path).unwrap();
    assert_eq!(store.count(RecordKind::Evaluation), 1);
    assert_eq!(store.latest(RecordKind::Evaluation).unwrap().len(), 1);
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(lines, 2, "one evaluation line plus its key");
}

#[tokio::test]
async fn store_failure_is_server_error_without_partial_write() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("evaluations.jsonl");
    std::os::unix::fs::symlink("/dev/full", &path).unwrap();
    let app = app(&path);
    let (status, body) = send(&app, post_record(&record("n1", "e1"), Some("k"))).await;
    assert!(status.is_server_error(), "{status}");
    assert!(body["error"].as_str().unwrap().contains("store"));
    assert_eq!(report(&app).await["sample_size"].as_u64(), Some(0));
    let (status, _) = send(&app, post_record(&record("n1", "e1"), Some("k"))).await;
    assert!(status.is_server_error(), "key must not be recorded after a failed write");
}

#[tokio::test]
async fn next_item_walks_the_sample_per_evaluator() {
    let dir = tempfile::tempdir().unwrap();
    generate(&SyntheticConfig { books: 1, narrations_per_book: 8, ..Default::default() })
        .write_sample(dir.path(), "svc")
        .unwrap();
    let cfg = PipelineConfig::load_with_env(&dir.path().join("pipeline.toml"), |_| None).unwrap();
    assert!(!run_pipeline(&cfg).partial);
    let evals = cfg.store_path(StoreName::Evaluations);
    let state = ServiceState::new(
        RecordStore::open(&evals).unwrap(),
        Some(cfg.store_path(StoreName::Grouped)),
        Some(cfg.store_path(StoreName::Bundles)),
        3,
        cfg.seed,
    )
    .unwrap();
    let sample: Vec<String> = state.sample().iter().map(|id| id.to_string()).collect();
    assert_eq!(sample.len(), 3);
    let app = router(Arc::new(state));

    let (status, _) = send(&app, Request::get("/api/v1/sample/next").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let next = |who: &str| Request::get(format!("/api/v1/sample/next?evaluator_id={who}")).body(Body::empty()).unwrap();
    for expected in &sample {
        let (status, item) = send(&app, next("e1")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(item["narration"]["narration_id"], expected.as_str());
        assert!(item["bundle"]["translations"].is_object());
        assert!(item["neighbors"].is_array());
        let (status, _) = send(&app, post_record(&record(expected, "e1"), None)).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (status, _) = send(&app, next("e1")).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, item) = send(&app, next("e2")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["narration"]["narration_id"], sample[0].as_str());
}
