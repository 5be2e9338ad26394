//! HTTP surface over [`Platform`].
//!
//! Every body is JSON with a top-level `"v": 1`. Errors are
//! `{"v":1,"error":{"code":..,"message":..,"details":..}}`.

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use hetflow_core::ham::HamManifest;
use hetflow_core::matcher::PlanMode;
use hetflow_core::PipelineDefinition;
use serde::de::DeserializeOwned;
use serde_json::{json, Value as JsonValue};
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

use crate::error::{ApiError, ErrorCode};
use crate::platform::{Event, Platform};

pub const DEFAULT_PORT: u16 = 7878;
pub const LISTEN_ENV: &str = "HETFLOW_LISTEN";

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(status: StatusCode, key: &str, value: impl serde::Serialize) -> ApiResult {
    let mut body = json!({ "v": 1 });
    body[key] = serde_json::to_value(value).map_err(|e| ApiError::new(ErrorCode::BackendError, e.to_string()))?;
    Ok((status, Json(body)).into_response())
}

fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(ErrorCode::BadRequest, format!("invalid body: {e}")))
}

fn mode(params: &HashMap<String, String>) -> Result<PlanMode, ApiError> {
    match params.get("mode") {
        None => Ok(PlanMode::Greedy),
        Some(m) => m.parse().map_err(|e: String| ApiError::new(ErrorCode::BadRequest, e)),
    }
}

/// Runs a platform call that may block (stop waits for a drain) off the
/// async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorCode::BackendError, e.to_string()))?
}

async fn list_processors(State(p): State<Arc<Platform>>) -> ApiResult {
    ok(StatusCode::OK, "processors", p.processors())
}

async fn list_pipelines(State(p): State<Arc<Platform>>) -> ApiResult {
    ok(StatusCode::OK, "pipelines", p.pipelines())
}

async fn load_pipeline(State(p): State<Arc<Platform>>, body: Bytes) -> ApiResult {
    let def: PipelineDefinition = parse_body(&body)?;
    if def.v != hetflow_core::pipeline::SCHEMA_VERSION {
        return Err(ApiError::new(ErrorCode::BadRequest, format!("unsupported pipeline schema version {}", def.v)));
    }
    ok(StatusCode::CREATED, "pipeline", p.load_pipeline(def)?)
}

async fn get_pipeline(State(p): State<Arc<Platform>>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, "pipeline", p.pipeline_definition(&id)?)
}

async fn load_ham(State(p): State<Arc<Platform>>, body: Bytes) -> ApiResult {
    let manifest: HamManifest = parse_body(&body)?;
    ok(StatusCode::CREATED, "ham", p.load_ham(&manifest)?)
}

async fn plan(State(p): State<Arc<Platform>>, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let mode = mode(&q)?;
    ok(StatusCode::OK, "plan", p.plan(&id, mode)?)
}

async fn start(State(p): State<Arc<Platform>>, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let mode = mode(&q)?;
    let view = blocking(move || p.start(&id, mode)).await?;
    ok(StatusCode::CREATED, "session", view)
}

async fn stop(State(p): State<Arc<Platform>>, Path(id): Path<String>) -> ApiResult {
    let view = blocking(move || p.stop(&id)).await?;
    ok(StatusCode::OK, "session", view)
}

async fn get_session(State(p): State<Arc<Platform>>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, "session", p.session(&id)?)
}

async fn list_sessions(State(p): State<Arc<Platform>>) -> ApiResult {
    ok(StatusCode::OK, "sessions", p.sessions())
}

fn sse_event(e: &Event) -> SseEvent {
    let mut data = serde_json::to_value(e).unwrap_or(JsonValue::Null);
    data["v"] = 1.into();
    let kind = data["kind"].as_str().unwrap_or("event").to_string();
    SseEvent::default().id(e.seq.to_string()).event(kind).data(data.to_string())
}

fn event_stream(backlog: Vec<Event>, rx: broadcast::Receiver<Event>) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    let last = backlog.last().map(|e| e.seq).unwrap_or(0);
    let live = stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq <= last => continue,
                Ok(e) => {
                    let seq = e.seq;
                    return Some((e, (rx, seq)));
                }
                // a slow reader lost events; the client reconnects with
                // Last-Event-ID and replays from the ring buffer
                Err(broadcast::error::RecvError::Lagged(_)) => return None,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    stream::iter(backlog).chain(live).map(|e| Ok(sse_event(&e)))
}

/// `GET /events?since=N`. Clients that accept `text/event-stream` get a
/// live stream; others get the buffered events as one JSON document.
async fn events(State(p): State<Arc<Platform>>, headers: HeaderMap, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let since = match q.get("since") {
        Some(s) => s.parse::<u64>().map_err(|_| ApiError::new(ErrorCode::BadRequest, format!("bad since {s:?}")))?,
        None => headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .unwrap_or(0),
    };
    let wants_stream = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"));
    if wants_stream {
        let (backlog, rx) = p.events().subscribe(since);
        return Ok(Sse::new(event_stream(backlog, rx)).keep_alive(KeepAlive::default()).into_response());
    }
    let events = p.events().since(since);
    Ok(Json(json!({ "v": 1, "events": events, "last_seq": p.events().last_seq() })).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such endpoint")
}

pub fn router(platform: Arc<Platform>, console_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/processors", get(list_processors))
        .route("/pipelines", get(list_pipelines).post(load_pipeline))
        .route("/pipelines/{id}", get(get_pipeline))
        .route("/pipelines/{id}/plan", post(plan))
        .route("/pipelines/{id}/start", post(start))
        .route("/hams", post(load_ham))
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/stop", post(stop))
        .route("/events", get(events))
        .with_state(platform);
    match console_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}
