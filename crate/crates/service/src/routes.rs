use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use medsyn_core::metrics::aggregate;
use medsyn_core::orchestrator::RunCase;
use medsyn_core::rundir::RunDir;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;

use crate::error::ServiceError;
use crate::state::{AppState, SessionView};

type AppResult<T> = Result<T, ServiceError>;

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub record_id: String,
    #[serde(default = "default_case")]
    pub case: RunCase,
}

fn default_case() -> RunCase {
    RunCase::HumanInLoop
}

#[derive(Debug, Deserialize)]
pub struct PostMessage {
    pub content: String,
}

#[derive(Debug, Deserialize)]
pub struct PostDischarge {
    pub diagnosis: String,
    pub codes: String,
}

pub fn api(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/records", get(list_records))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/message", post(post_message_sse))
        .route("/sessions/{id}/message/sync", post(post_message_sync))
        .route("/sessions/{id}/discharge", post(post_discharge))
        .route("/reports/{run_id}", get(get_report))
        .with_state(state)
}

async fn list_records(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.list_records())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> AppResult<(axum::http::StatusCode, Json<SessionView>)> {
    let view = state.create_session(&body.record_id, body.case).await?;
    Ok((axum::http::StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.session_ids().await)
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<SessionView>> {
    let session = state.session(&id).await?;
    let s = session.lock().await;
    Ok(Json(state.view(&s)))
}

async fn status_of(state: &AppState, id: &str) -> serde_json::Value {
    match state.session(id).await {
        Ok(s) => serde_json::to_value(s.lock().await.status()).unwrap_or_default(),
        Err(_) => serde_json::Value::Null,
    }
}

/// Posts a physician message and returns the assistant reply as JSON.
async fn post_message_sync(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PostMessage>,
) -> AppResult<Json<serde_json::Value>> {
    let pending = state.begin_message(&id, &body.content).await?;
    let reply = match &pending.call {
        Some((backend, messages)) => {
            let reply = backend.chat(messages).await;
            Some(state.finish_message(&id, &pending, reply).await?)
        }
        None => None,
    };
    Ok(Json(json!({
        "physician_turn": pending.physician_turn,
        "assistant_turn": reply,
        "status": status_of(&state, &id).await,
    })))
}

enum SseMsg {
    Delta(String),
    Done(serde_json::Value),
    Error(serde_json::Value),
}

impl SseMsg {
    fn into_event(self) -> Event {
        let (name, data) = match self {
            SseMsg::Delta(text) => ("delta", json!({ "text": text })),
            SseMsg::Done(v) => ("done", v),
            SseMsg::Error(v) => ("error", v),
        };
        Event::default().event(name).data(data.to_string())
    }
}

/// Posts a physician message and streams the assistant reply.
///
/// Events: `turn` (the accepted physician turn), `delta` (reply text),
/// then exactly one of `done` or `error`. Deltas preceding an `error`
/// must be discarded by the client.
async fn post_message_sse(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PostMessage>,
) -> AppResult<Response> {
    let pending = state.begin_message(&id, &body.content).await?;
    let first = Event::default().event("turn").data(json!(pending.physician_turn).to_string());
    let (tx, rx) = mpsc::unbounded_channel::<SseMsg>();

    tokio::spawn(async move {
        let reply = match &pending.call {
            Some((backend, messages)) => {
                let delta_tx = tx.clone();
                let mut on_delta = move |d: &str| {
                    let _ = delta_tx.send(SseMsg::Delta(d.to_string()));
                };
                Some(backend.chat_stream(messages, &mut on_delta).await)
            }
            None => None,
        };
        let msg = match reply {
            None => SseMsg::Done(json!({ "turn": null, "status": status_of(&state, &id).await })),
            Some(reply) => match state.finish_message(&id, &pending, reply).await {
                Ok(turn) => SseMsg::Done(json!({ "turn": turn, "status": status_of(&state, &id).await })),
                Err(e) => SseMsg::Error(json!({ "error": e.code(), "message": e.to_string() })),
            },
        };
        let _ = tx.send(msg);
    });

    let rest = stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|m| (m.into_event(), rx)) });
    let events: std::pin::Pin<Box<dyn Stream<Item = Result<Event, Infallible>> + Send>> =
        Box::pin(futures::StreamExt::map(futures::StreamExt::chain(stream::iter([first]), rest), Ok));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

async fn post_discharge(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PostDischarge>,
) -> AppResult<Json<SessionView>> {
    Ok(Json(state.submit_discharge(&id, &body.diagnosis, &body.codes).await?))
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

async fn get_report(State(state): State<Arc<AppState>>, Path(run_id): Path<String>) -> AppResult<Json<serde_json::Value>> {
    let runs = state.settings().runs_dir.clone().ok_or_else(|| ServiceError::NotFound("reports".into()))?;
    if !valid_run_id(&run_id) {
        return Err(ServiceError::BadRequest(format!("invalid run id `{run_id}`")));
    }
    let path = runs.join(&run_id);
    if !path.is_dir() {
        return Err(ServiceError::NotFound(format!("run `{run_id}`")));
    }
    let body = tokio::task::spawn_blocking(move || -> AppResult<serde_json::Value> {
        let dir = RunDir::open(&path).map_err(|e| ServiceError::NotFound(e.to_string()))?;
        let results = dir.results().map_err(|e| ServiceError::Internal(e.to_string()))?;
        let report = aggregate(&results).map_err(|e| ServiceError::NotFound(e.to_string()))?;
        Ok(json!({
            "run_id": run_id,
            "manifest": dir.manifest(),
            "report": report,
            "table_csv": report.table_csv(),
            "histogram_csv": report.histogram_csv(),
        }))
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(body))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids() {
        assert!(valid_run_id("run-2026_01.a"));
        assert!(!valid_run_id(".."));
        assert!(!valid_run_id("a/b"));
        assert!(!valid_run_id(""));
    }
}
