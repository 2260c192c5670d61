//! JSON-over-HTTP front end for [`Coach`].

use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::preference::PreferenceSubmission;
use crate::service::CreateSession;
use crate::session::Condition;
use crate::{Coach, CoachError, TrialSubmission};

pub const TOKEN_ENV: &str = "CORGI_COACH_TOKEN";

#[derive(Clone)]
struct AppState {
    coach: Arc<Coach>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

struct ApiError(CoachError);

impl From<CoachError> for ApiError {
    fn from(e: CoachError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use CoachError as E;
        let (status, kind) = match &self.0 {
            E::UnknownStimulus(_) => (StatusCode::NOT_FOUND, "unknown_stimulus"),
            E::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            E::UnknownPair(_) => (StatusCode::NOT_FOUND, "unknown_pair"),
            E::NoSessions(_) => (StatusCode::NOT_FOUND, "no_sessions"),
            E::SessionComplete(_) => (StatusCode::CONFLICT, "session_complete"),
            E::IncompleteSession { .. } => (StatusCode::CONFLICT, "incomplete_session"),
            E::Validation(_) | E::Traj(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            E::ConditionUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "condition_unavailable"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(ErrorBody { error: kind.into(), message: self.0.to_string() })).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

/// Runs a service call off the async runtime; decoding a correction is CPU-bound.
async fn blocking<T: Send + 'static>(
    coach: &Arc<Coach>,
    f: impl FnOnce(&Coach) -> crate::Result<T> + Send + 'static,
) -> ApiResult<T> {
    let coach = coach.clone();
    let out = tokio::task::spawn_blocking(move || f(&coach))
        .await
        .map_err(|e| ApiError(CoachError::Io(std::io::Error::other(e))))?;
    Ok(Json(out?))
}

async fn create_session(State(st): State<AppState>, Json(req): Json<CreateSession>) -> impl IntoResponse {
    blocking(&st.coach, move |c| c.create_session(&req)).await.map(|j| (StatusCode::CREATED, j))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(&st.coach, move |c| c.session_view(&id)).await
}

async fn submit_trial(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(sub): Json<TrialSubmission>,
) -> impl IntoResponse {
    blocking(&st.coach, move |c| c.submit_trial(&id, &sub)).await.map(|j| (StatusCode::CREATED, j))
}

async fn list_stimuli(State(st): State<AppState>) -> Json<Vec<String>> {
    Json(st.coach.stimulus_ids())
}

async fn get_stimulus(State(st): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(&st.coach, move |c| c.stimulus_view(&id)).await
}

#[derive(Deserialize)]
struct SeedQuery {
    #[serde(default)]
    seed: Option<u64>,
}

async fn preference_prompt(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SeedQuery>,
) -> impl IntoResponse {
    let seed = q.seed.unwrap_or_else(rand::random);
    blocking(&st.coach, move |c| c.preference_prompt(&id, seed)).await
}

#[derive(Serialize)]
struct Stored {
    id: String,
}

async fn submit_preference(State(st): State<AppState>, Json(sub): Json<PreferenceSubmission>) -> impl IntoResponse {
    blocking(&st.coach, move |c| c.submit_preference(&sub).map(|id| Stored { id }))
        .await
        .map(|j| (StatusCode::CREATED, j))
}

async fn preference_report(State(st): State<AppState>) -> impl IntoResponse {
    blocking(&st.coach, |c| Ok(c.preference_rates())).await
}

#[derive(Deserialize)]
struct GainQuery {
    condition: String,
}

async fn gains_report(State(st): State<AppState>, Query(q): Query<GainQuery>) -> impl IntoResponse {
    blocking(&st.coach, move |c| c.gains(q.condition.parse::<Condition>()?)).await
}

async fn export_sessions(State(st): State<AppState>) -> Result<Response, ApiError> {
    let body = st.coach.store().export_sessions()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn require_token(State(st): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        let given =
            headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_ref()) {
            let body = ErrorBody { error: "unauthorized".into(), message: "missing or wrong bearer token".into() };
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

/// All endpoints; every request must carry `Authorization: Bearer <token>` when a token is set.
pub fn router(coach: Arc<Coach>, token: Option<String>) -> Router {
    let state = AppState { coach, token: token.filter(|t| !t.is_empty()).map(Into::into) };
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/trials", post(submit_trial))
        .route("/stimuli", get(list_stimuli))
        .route("/stimuli/{id}", get(get_stimulus))
        .route("/preference-pairs/{id}", get(preference_prompt))
        .route("/preferences", post(submit_preference))
        .route("/reports/gains", get(gains_report))
        .route("/reports/preferences", get(preference_report))
        .route("/export/sessions", get(export_sessions))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(coach: Arc<Coach>, token: Option<String>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "coach service listening");
    axum::serve(listener, router(coach, token)).await
}
