//! HTTP service for golden-trajectory review: browse queries and candidate
//! trajectories, record selections and flags, request model revisions,
//! and read agreement and per-category report summaries.
//!
//! State lives in a data directory of append-only JSONL logs and is
//! rebuilt in memory on startup.

pub mod error;
pub mod revise;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::Value;

use trajkit::rollout::ChatModel;
use trajkit::{MetricReport, Query, Tier, Trajectory};

pub use error::{ServiceError, ServiceResult};
pub use store::{AnnotationRecord, Store, JUDGE_ANNOTATOR};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<Store>>,
    reviser: Option<Arc<dyn ChatModel>>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        AppState {
            store: Arc::new(RwLock::new(store)),
            reviser: None,
        }
    }

    pub fn with_reviser(mut self, model: Arc<dyn ChatModel>) -> Self {
        self.reviser = Some(model);
        self
    }

    pub fn store(&self) -> &Arc<RwLock<Store>> {
        &self.store
    }

    fn read<T>(&self, f: impl FnOnce(&Store) -> ServiceResult<T>) -> ServiceResult<T> {
        let guard = self.store.read().map_err(|_| ServiceError::Internal("store lock poisoned".into()))?;
        f(&guard)
    }

    fn write<T>(&self, f: impl FnOnce(&mut Store) -> ServiceResult<T>) -> ServiceResult<T> {
        let mut guard = self.store.write().map_err(|_| ServiceError::Internal("store lock poisoned".into()))?;
        f(&mut guard)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/queries", get(list_queries).post(import_queries))
        .route("/queries/{id}/candidates", get(list_candidates).post(import_candidate))
        .route("/queries/{id}/selection", post(select))
        .route("/queries/{id}/selections", get(list_selections))
        .route("/trajectories/{id}", get(get_trajectory))
        .route("/trajectories/{id}/flag", post(flag))
        .route("/trajectories/{id}/approve", post(approve))
        .route("/trajectories/{id}/revise", post(revise))
        .route("/review-queue", get(review_queue))
        .route("/agreement", get(agreement))
        .route("/reports", post(import_reports))
        .route("/reports/by-category", get(reports_by_category))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, data_dir: &Path, reviser: Option<Arc<dyn ChatModel>>) -> std::io::Result<()> {
    let store = Store::open(data_dir).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut state = AppState::new(store);
    if let Some(m) = reviser {
        state = state.with_reviser(m);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, data = %data_dir.display(), "serving");
    axum::serve(listener, router(state)).await
}

fn annotator(headers: &HeaderMap, body: Option<&str>) -> ServiceResult<String> {
    body.filter(|s| !s.is_empty())
        .map(str::to_owned)
        .or_else(|| headers.get(ANNOTATOR_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned))
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ServiceError::BadRequest("annotator_id is required (body field or X-Annotator-Id header)".into()))
}

/// Accepts either one record or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    Many(Vec<T>),
    One(T),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::Many(v) => v,
            OneOrMany::One(t) => vec![t],
        }
    }
}

#[derive(Deserialize)]
struct QueryFilter {
    tier: Option<Tier>,
    category: Option<String>,
}

async fn list_queries(State(s): State<AppState>, UrlQuery(f): UrlQuery<QueryFilter>) -> ServiceResult<Json<Value>> {
    s.read(|st| Ok(Json(serde_json::to_value(st.queries(f.tier, f.category.as_deref())).unwrap())))
}

async fn import_queries(State(s): State<AppState>, Json(body): Json<OneOrMany<Query>>) -> ServiceResult<Json<Value>> {
    let qs = body.into_vec();
    let n = qs.len();
    s.write(|st| qs.into_iter().try_for_each(|q| st.add_query(q)))?;
    Ok(Json(serde_json::json!({"imported": n})))
}

async fn list_candidates(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Json<Value>> {
    s.read(|st| Ok(Json(serde_json::to_value(st.candidates(&id)?).unwrap())))
}

#[derive(Deserialize)]
struct CandidateImport {
    trajectory_id: Option<String>,
    trajectory: Trajectory,
}

async fn import_candidate(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<CandidateImport>,
) -> ServiceResult<Json<Value>> {
    let tid = s.write(|st| st.add_candidate(&id, body.trajectory, body.trajectory_id))?;
    Ok(Json(serde_json::json!({"trajectory_id": tid})))
}

#[derive(Deserialize)]
struct SelectionBody {
    annotator_id: Option<String>,
    candidate: Value,
}

async fn select(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(body): Json<SelectionBody>,
) -> ServiceResult<Json<AnnotationRecord>> {
    let who = annotator(&headers, body.annotator_id.as_deref())?;
    s.write(|st| st.select(&id, &who, &body.candidate)).map(Json)
}

async fn list_selections(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Json<Value>> {
    s.read(|st| Ok(Json(serde_json::to_value(st.selections(&id)?).unwrap())))
}

async fn get_trajectory(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Json<Value>> {
    s.read(|st| {
        let rec = st.trajectory(&id)?;
        let mut v = serde_json::to_value(rec).unwrap();
        v["status"] = serde_json::to_value(st.status(&id)).unwrap();
        v["flags"] = serde_json::to_value(st.feedback_for(&id)).unwrap();
        Ok(Json(v))
    })
}

#[derive(Deserialize)]
struct FlagBody {
    annotator_id: Option<String>,
    issue_text: String,
}

async fn flag(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(body): Json<FlagBody>,
) -> ServiceResult<Json<Value>> {
    let who = annotator(&headers, body.annotator_id.as_deref())?;
    s.write(|st| Ok(Json(serde_json::to_value(st.flag(&id, &who, &body.issue_text)?).unwrap())))
}

#[derive(Deserialize, Default)]
struct ApproveBody {
    annotator_id: Option<String>,
}

async fn approve(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Option<Json<ApproveBody>>,
) -> ServiceResult<Json<Value>> {
    let body = body.map(|b| b.0).unwrap_or_default();
    let who = annotator(&headers, body.annotator_id.as_deref())?;
    s.write(|st| Ok(Json(serde_json::to_value(st.approve(&id, &who)?).unwrap())))
}

#[derive(Deserialize, Default)]
struct ReviseBody {
    feedback: Option<String>,
}

async fn revise(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<ReviseBody>>,
) -> ServiceResult<Json<Value>> {
    let model = s
        .reviser
        .clone()
        .ok_or_else(|| ServiceError::Unavailable("no revision model is configured".into()))?;
    let (original, feedback) = s.read(|st| {
        let rec = st.trajectory(&id)?;
        if st.status(&id) != Some(trajkit::metrics::GoldenStatus::Flagged) {
            return Err(ServiceError::Conflict(format!("trajectory {id} is not flagged")));
        }
        let stored: Vec<String> = st.feedback_for(&id).into_iter().map(|f| f.issue_text).collect();
        Ok((rec.trajectory.clone(), stored.join("\n")))
    })?;
    let feedback = body.and_then(|b| b.0.feedback).filter(|f| !f.trim().is_empty()).unwrap_or(feedback);
    let revised = tokio::task::spawn_blocking(move || revise::revise_trajectory(model.as_ref(), &original, &feedback).map(|t| (t, feedback)))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    s.write(|st| Ok(Json(serde_json::to_value(st.add_revision(&id, revised.0, revised.1)?).unwrap())))
}

async fn review_queue(State(s): State<AppState>) -> ServiceResult<Json<Value>> {
    s.read(|st| Ok(Json(serde_json::to_value(st.review_queue()).unwrap())))
}

#[derive(Deserialize)]
struct AgreementParams {
    metric: Option<String>,
}

async fn agreement(State(s): State<AppState>, UrlQuery(p): UrlQuery<AgreementParams>) -> ServiceResult<Json<Value>> {
    match p.metric.as_deref() {
        None | Some("selection") => s.read(|st| Ok(Json(serde_json::to_value(st.agreement()).unwrap()))),
        Some(other) => Err(ServiceError::BadRequest(format!("unsupported agreement metric {other:?}"))),
    }
}

async fn import_reports(State(s): State<AppState>, Json(body): Json<OneOrMany<MetricReport>>) -> ServiceResult<Json<Value>> {
    let rs = body.into_vec();
    let n = rs.len();
    s.write(|st| rs.into_iter().try_for_each(|r| st.add_report(r)))?;
    Ok(Json(serde_json::json!({"imported": n})))
}

async fn reports_by_category(State(s): State<AppState>) -> ServiceResult<Json<Value>> {
    s.read(|st| Ok(Json(serde_json::to_value(st.reports_by_category()).unwrap())))
}
