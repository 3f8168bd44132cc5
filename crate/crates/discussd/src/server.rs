//! HTTP and server-sent-events front end for [`SessionStore`].
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | POST | `/sessions` | `PolicyConfig` → `{"session_id"}` |
//! | GET | `/sessions/{id}` | `SessionState` |
//! | POST | `/sessions/{id}/turns` | `{"speaker","text"}` → `PostTurnResult` |
//! | GET | `/sessions/{id}/events?from=N` | SSE stream of `SessionEvent` |
//! | GET | `/sessions/{id}/transcript` | transcript text, or JSON with warnings |
//! | PATCH | `/sessions/{id}/policy` | `{"threshold"}` → `PolicyConfig` |
//! | POST | `/sessions/{id}/close` | 204 |
//! | GET | `/healthz` | `ok` |

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;

use crate::policy::PolicyConfig;
use crate::session::{SessionError, SessionStore};

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            SessionError::SessionClosed => (StatusCode::CONFLICT, "SessionClosed"),
            SessionError::ReservedSpeakerName(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ReservedSpeakerName"),
            SessionError::InvalidTurn(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidTurn"),
            SessionError::InvalidPolicyConfig(_) => (StatusCode::BAD_REQUEST, "InvalidPolicyConfig"),
            SessionError::CorruptLog { .. } | SessionError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        (status, Json(json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct TurnBody {
    speaker: String,
    text: String,
}

#[derive(Deserialize)]
struct PolicyPatch {
    threshold: f64,
}

#[derive(Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_state))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/policy", patch(update_policy))
        .route("/sessions/{id}/close", post(close_session))
        .with_state(store)
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    Json(cfg): Json<PolicyConfig>,
) -> Result<impl IntoResponse, ApiError> {
    let id = store.create_session(cfg)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn session_state(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.state(&id)?))
}

async fn post_turn(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Json(body): Json<TurnBody>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.post_turn(&id, &body.speaker, &body.text).await?))
}

/// Resumes from `?from=N`, else from one past `Last-Event-ID`, else from 0.
async fn events(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|n| n + 1);
    let from = q.from.or(last_seen).unwrap_or(0);
    let stream = store.subscribe(&id, from)?.map(|ev| {
        let data = serde_json::to_string(&ev).unwrap_or_default();
        Ok(Event::default().id(ev.seq.to_string()).event(ev.payload.kind()).data(data))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// Plain text by default; `Accept: application/json` gets the warnings too.
async fn transcript(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let export = store.export(&id)?;
    let wants_json =
        headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("application/json"));
    if wants_json {
        return Ok(Json(export).into_response());
    }
    let mut resp = export.text.into_response();
    resp.headers_mut().insert("x-transcript-warnings", HeaderValue::from(export.warnings.len()));
    Ok(resp)
}

async fn update_policy(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Json(patch): Json<PolicyPatch>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.update_threshold(&id, patch.threshold)?))
}

async fn close_session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    store.close_session(&id).await?;
    Ok(StatusCode::NO_CONTENT)
}

/// Bind and serve until ctrl-c.
pub async fn serve(store: Arc<SessionStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
