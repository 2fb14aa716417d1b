//! JSON-over-HTTP binding of [`Service`]. Every mutating request is
//! serialized through one write lock; reads share a consistent view.
//!
//! Status codes: 400 for contract violations and malformed bodies, 404 for
//! unknown ids (or no campaign yet), 409 for a second review of the same
//! escalation, 500 for store I/O failures.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use carecall_core::triage::ReviewStatus;
use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::service::{
    wall_clock, CreateCampaign, LabelRequest, RegisterSubject, ReviewRequest, Service, ServiceError, SpreadRequest,
    StartSession, UtteranceRequest,
};

pub type SharedService = Arc<RwLock<Service>>;

#[derive(Clone)]
pub struct AppState {
    pub service: SharedService,
    /// When set, every request must carry `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    status: u16,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: &self.message,
            status: self.status.as_u16(),
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use carecall_core::Error as E;
        let status = match &e {
            ServiceError::Core(E::NotFound(_)) | ServiceError::NoCampaign => StatusCode::NOT_FOUND,
            ServiceError::Core(E::AlreadyReviewed(_)) => StatusCode::CONFLICT,
            ServiceError::Core(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: e.body_text(),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: e.body_text(),
        }
    }
}

/// `Json` whose rejections are reported as 400 with a JSON error body.
#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct Body<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct Query<T>(T);

type ApiResult<T> = Result<Json<T>, ApiError>;

/// A JSON body that may be omitted entirely.
fn optional_body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        message: format!("invalid JSON body: {e}"),
    })
}

fn lock_poisoned() -> ApiError {
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: "service state lock poisoned".into(),
    }
}

fn read<T>(state: &AppState, f: impl FnOnce(&Service) -> Result<T, ServiceError>) -> ApiResult<T> {
    let guard = state.service.read().map_err(|_| lock_poisoned())?;
    Ok(Json(f(&guard)?))
}

fn write<T>(state: &AppState, f: impl FnOnce(&mut Service) -> Result<T, ServiceError>) -> ApiResult<T> {
    let mut guard = state.service.write().map_err(|_| lock_poisoned())?;
    Ok(Json(f(&mut guard)?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/campaigns", post(create_campaign).get(list_campaigns))
        .route("/campaigns/{id}", get(campaign_info))
        .route("/campaigns/{id}/run-day", post(run_day))
        .route("/subjects", post(register_subject))
        .route("/subjects/{id}", get(subject))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/hang-up", post(hang_up))
        .route("/escalations", get(escalations))
        .route("/escalations/{id}", get(escalation))
        .route("/escalations/{id}/review", post(review))
        .route("/hitl/batch", get(hitl_batch))
        .route("/labels", post(labels))
        .route("/metrics", get(metrics))
        .route("/purge", post(purge))
        .route("/spread/estimate", post(spread_estimate))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError {
                status: StatusCode::UNAUTHORIZED,
                message: "missing or wrong operator token".into(),
            }
            .into_response();
        }
    }
    next.run(request).await
}

async fn health() -> &'static str {
    "ok"
}

async fn create_campaign(State(state): State<AppState>, Body(req): Body<CreateCampaign>) -> impl IntoResponse {
    write(&state, |s| s.create_campaign(req)).map(|body| (StatusCode::CREATED, body))
}

async fn list_campaigns(State(state): State<AppState>) -> ApiResult<Vec<crate::service::CampaignInfo>> {
    read(&state, |s| {
        s.campaign_ids().iter().map(|id| s.campaign_info(id)).collect()
    })
}

async fn campaign_info(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<crate::service::CampaignInfo> {
    read(&state, |s| s.campaign_info(&id))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDayRequest {
    #[serde(default)]
    seed: Option<u64>,
}

async fn run_day(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<carecall_core::campaign::DaySummary> {
    let req: RunDayRequest = optional_body(&body)?;
    write(&state, |s| s.run_day(&id, req.seed))
}

async fn register_subject(State(state): State<AppState>, Body(req): Body<RegisterSubject>) -> impl IntoResponse {
    write(&state, |s| s.register_subject(req)).map(|body| (StatusCode::CREATED, body))
}

async fn subject(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<carecall_core::campaign::SubjectEntry> {
    read(&state, |s| s.subject(&id))
}

async fn start_session(State(state): State<AppState>, Body(req): Body<StartSession>) -> impl IntoResponse {
    write(&state, |s| s.start_session(req)).map(|body| (StatusCode::CREATED, body))
}

async fn session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<carecall_core::dialog::CallSession> {
    read(&state, |s| s.session(&id))
}

async fn utterance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<UtteranceRequest>,
) -> ApiResult<carecall_core::campaign::UtteranceOutcome> {
    write(&state, |s| s.utterance(&id, req))
}

#[derive(Serialize)]
struct HangUpResponse {
    decision: carecall_core::triage::TriageDecision,
}

async fn hang_up(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<HangUpResponse> {
    write(&state, |s| s.hang_up(&id).map(|decision| HangUpResponse { decision }))
}

#[derive(Debug, Deserialize)]
struct EscalationQuery {
    status: Option<ReviewStatus>,
}

async fn escalations(
    State(state): State<AppState>,
    Query(q): Query<EscalationQuery>,
) -> ApiResult<Vec<carecall_core::triage::EscalationRecord>> {
    read(&state, |s| s.escalations(q.status))
}

async fn escalation(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<carecall_core::triage::EscalationRecord> {
    read(&state, |s| s.escalation(&id))
}

async fn review(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<ReviewRequest>,
) -> ApiResult<crate::service::ReviewOutcome> {
    write(&state, |s| s.review(&id, req))
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    50
}

async fn hitl_batch(
    State(state): State<AppState>,
    Query(q): Query<BatchQuery>,
) -> ApiResult<Vec<carecall_core::triage::PoolItem>> {
    read(&state, |s| s.hitl_batch(q.k))
}

async fn labels(
    State(state): State<AppState>,
    Body(req): Body<LabelRequest>,
) -> ApiResult<crate::service::LabelOutcome> {
    write(&state, |s| s.apply_labels(req))
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

async fn metrics(
    State(state): State<AppState>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<carecall_core::campaign::MetricsReport> {
    read(&state, |s| s.metrics(q.from, q.to))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PurgeRequest {
    #[serde(default)]
    now: Option<carecall_core::Timestamp>,
}

async fn purge(State(state): State<AppState>, body: Bytes) -> ApiResult<crate::service::PurgeOutcome> {
    let req: PurgeRequest = optional_body(&body)?;
    let now = req.now.unwrap_or_else(wall_clock);
    write(&state, |s| s.purge(now))
}

async fn spread_estimate(
    State(state): State<AppState>,
    Body(req): Body<SpreadRequest>,
) -> ApiResult<carecall_core::spread::PosteriorResult> {
    read(&state, |s| s.spread_estimate(req))
}
