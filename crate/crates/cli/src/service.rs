//! HTTP service behind the expert-review form.
//!
//! | method | path                                   | success | errors          |
//! |--------|----------------------------------------|---------|-----------------|
//! | GET    | `/api/v1/sample/next?evaluator_id=ID`  | 200/204 | 400, 500        |
//! | POST   | `/api/v1/evaluations`                  | 201/200 | 400, 409, 422, 500 |
//! | GET    | `/api/v1/report`                       | 200     | 500             |
//!
//! A POST carrying an `Idempotency-Key` header is recorded once: repeating
//! it returns 200 with `"duplicate": true`, and reusing the key for a
//! different body returns 409. Rejected records get 422 with the name of
//! the violated invariant. Store failures return 500 and write nothing.
//!
//! The service keeps no state of its own beyond the record stores; the
//! review sample is recomputed from the corpus and the configured seed.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hadith_corpus::evaluate::{build_report, draw_sample, EvaluationRecord};
use hadith_corpus::model::{EnrichmentBundle, Narration, NarrationId, Validate};
use hadith_corpus::store::{Checkpoint, Record, RecordKind, RecordStore, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const SUBMISSION_STAGE: &str = "submission";

pub struct ServiceState {
    evaluations: RecordStore,
    corpus: Option<PathBuf>,
    bundles: Option<PathBuf>,
    sample: Vec<NarrationId>,
    submit: Mutex<()>,
}

impl ServiceState {
    /// `corpus` is the grouped (or aligned) narration store; the review
    /// sample is drawn from its narrations with `seed`.
    pub fn new(
        evaluations: RecordStore,
        corpus: Option<PathBuf>,
        bundles: Option<PathBuf>,
        sample_size: usize,
        seed: u64,
    ) -> Result<Self, StoreError> {
        let mut sample = Vec::new();
        if let Some(path) = corpus.as_ref().filter(|p| p.exists()) {
            let ids: Vec<NarrationId> = RecordStore::open_existing(path)?
                .narrations()?
                .into_iter()
                .filter(Narration::is_hadith)
                .map(|n| n.narration_id)
                .collect();
            sample = draw_sample(&ids, sample_size.min(ids.len()), seed).expect("sample size capped");
        }
        Ok(Self { evaluations, corpus, bundles, sample, submit: Mutex::new(()) })
    }

    pub fn sample(&self) -> &[NarrationId] {
        &self.sample
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/api/v1/sample/next", get(next_item))
        .route("/api/v1/evaluations", post(submit))
        .route("/api/v1/report", get(report))
        .with_state(state)
}

fn error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

fn store_failure(e: impl std::fmt::Display) -> Response {
    tracing::error!(error = %e, "store failure");
    error(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": format!("store failure: {e}") }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f).await.map_err(store_failure)
}

#[derive(Deserialize)]
struct NextQuery {
    evaluator_id: Option<String>,
}

#[derive(Serialize)]
pub struct SampleItem {
    pub narration: Narration,
    pub bundle: Option<EnrichmentBundle>,
    /// Other narrations of the same group.
    pub neighbors: Vec<Narration>,
    pub position: usize,
    pub sample_size: usize,
}

fn next_for(state: &ServiceState, evaluator: &str) -> Result<Option<SampleItem>, StoreError> {
    let Some((position, id)) = state
        .sample
        .iter()
        .enumerate()
        .find(|(_, id)| !state.evaluations.contains(RecordKind::Evaluation, &format!("{id}:{evaluator}")))
    else {
        return Ok(None);
    };
    let corpus = RecordStore::open_existing(state.corpus.as_ref().expect("sample implies corpus"))?;
    let Some(Record::Narration(narration)) = corpus.get(RecordKind::Narration, id.as_str())? else {
        return Ok(None);
    };
    let neighbors = match &narration.group_id {
        Some(g) => corpus
            .narrations()?
            .into_iter()
            .filter(|n| n.group_id.as_ref() == Some(g) && n.narration_id != narration.narration_id)
            .collect(),
        None => Vec::new(),
    };
    let bundle = match state.bundles.as_ref().filter(|p| p.exists()) {
        Some(p) => match RecordStore::open_existing(p)?.get(RecordKind::Enrichment, id.as_str())? {
            Some(Record::Enrichment(b)) => Some(b),
            _ => None,
        },
        None => None,
    };
    Ok(Some(SampleItem { narration, bundle, neighbors, position, sample_size: state.sample.len() }))
}

async fn next_item(State(state): State<Arc<ServiceState>>, Query(q): Query<NextQuery>) -> Response {
    let Some(evaluator) = q.evaluator_id.filter(|e| !e.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, json!({ "error": "evaluator_id query parameter required" }));
    };
    match blocking(move || next_for(&state, &evaluator)).await {
        Err(r) => r,
        Ok(Err(e)) => store_failure(e),
        Ok(Ok(None)) => StatusCode::NO_CONTENT.into_response(),
        Ok(Ok(Some(item))) => Json(item).into_response(),
    }
}

fn body_hash(body: &[u8]) -> String {
    Sha256::digest(body).iter().map(|b| format!("{b:02x}")).collect()
}

fn record_submission(state: &ServiceState, record: EvaluationRecord, key: Option<String>, hash: String) -> Response {
    let _guard = state.submit.lock().expect("submission lock");
    let record_key = record.key();
    if let Some(k) = &key {
        match state.evaluations.checkpoint(SUBMISSION_STAGE, k) {
            Err(e) => return store_failure(e),
            Ok(Some(seen)) if seen.input_hash == hash => {
                return (StatusCode::OK, Json(json!({ "key": record_key, "duplicate": true }))).into_response();
            }
            Ok(Some(_)) => {
                return error(
                    StatusCode::CONFLICT,
                    json!({ "error": format!("idempotency key `{k}` was used for a different record") }),
                );
            }
            Ok(None) => {}
        }
    }
    let mut batch = vec![Record::Evaluation(record)];
    if let Some(k) = key {
        batch.push(Record::Checkpoint(Checkpoint { stage: SUBMISSION_STAGE.into(), key: k, input_hash: hash }));
    }
    match state.evaluations.put_batch(&batch) {
        Ok(_) => (StatusCode::CREATED, Json(json!({ "key": record_key, "duplicate": false }))).into_response(),
        Err(StoreError::Invalid(v)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": v.to_string(), "invariant": v.invariant }))
        }
        Err(e) => store_failure(e),
    }
}

async fn submit(State(state): State<Arc<ServiceState>>, headers: HeaderMap, body: Bytes) -> Response {
    let record: EvaluationRecord = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return error(StatusCode::BAD_REQUEST, json!({ "error": format!("malformed evaluation record: {e}") }))
        }
    };
    if let Err(v) = record.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": v.to_string(), "invariant": v.invariant }));
    }
    let key = match headers.get(IDEMPOTENCY_HEADER).map(|v| v.to_str()) {
        None => None,
        Some(Ok(k)) if !k.trim().is_empty() => Some(k.trim().to_string()),
        Some(_) => return error(StatusCode::BAD_REQUEST, json!({ "error": "invalid idempotency key" })),
    };
    let hash = body_hash(&serde_json::to_vec(&record).expect("record serializes"));
    blocking(move || record_submission(&state, record, key, hash)).await.unwrap_or_else(|r| r)
}

async fn report(State(state): State<Arc<ServiceState>>) -> Response {
    match blocking(move || state.evaluations.evaluations()).await {
        Err(r) => r,
        Ok(Err(e)) => store_failure(e),
        Ok(Ok(records)) => Json(build_report(&records)).into_response(),
    }
}
