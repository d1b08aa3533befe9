use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use medsyn_core::llm_client::{ApiFlavor, BackendConfig, ChatBackend, ChatMessage, HttpBackend, LlmError, Telemetry};
use serde_json::{json, Value};

#[derive(Clone)]
struct Fake {
    hits: Arc<AtomicUsize>,
    fail_first: usize,
    fail_status: StatusCode,
    delay: Duration,
    bodies: Arc<std::sync::Mutex<Vec<Value>>>,
}

impl Fake {
    fn new(fail_first: usize, fail_status: StatusCode) -> Self {
        Self {
            hits: Arc::default(),
            fail_first,
            fail_status,
            delay: Duration::ZERO,
            bodies: Arc::default(),
        }
    }
}

async fn openai(State(f): State<Fake>, Json(body): Json<Value>) -> Response {
    let n = f.hits.fetch_add(1, Ordering::SeqCst);
    f.bodies.lock().unwrap().push(body.clone());
    tokio::time::sleep(f.delay).await;
    if n < f.fail_first {
        return (f.fail_status, "unavailable").into_response();
    }
    if body["stream"] == json!(true) {
        let sse = [
            r#"data: {"choices":[{"delta":{"role":"assistant"}}]}"#,
            r#"data: {"choices":[{"delta":{"content":"<think>hmm</think>Hel"}}]}"#,
            r#"data: {"choices":[{"delta":{"content":"lo"}}]}"#,
            "data: [DONE]",
        ]
        .join("\n\n");
        return ([("content-type", "text/event-stream")], sse + "\n\n").into_response();
    }
    Json(json!({"choices": [{"message": {"role": "assistant", "content": format!("reply {}", n + 1)}}]})).into_response()
}

async fn ollama(State(f): State<Fake>, Json(body): Json<Value>) -> Response {
    f.hits.fetch_add(1, Ordering::SeqCst);
    f.bodies.lock().unwrap().push(body.clone());
    if body["stream"] == json!(true) {
        let lines = [
            r#"{"message":{"role":"assistant","content":"a"},"done":false}"#,
            r#"{"message":{"role":"assistant","content":"b"},"done":true}"#,
        ]
        .join("\n");
        return lines.into_response();
    }
    Json(json!({"message": {"role": "assistant", "content": "native"}, "done": true})).into_response()
}

async fn serve(fake: Fake) -> String {
    let app = Router::new()
        .route("/v1/chat/completions", post(openai))
        .route("/api/chat", post(ollama))
        .with_state(fake);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn config(base: &str, retries: u32) -> BackendConfig {
    BackendConfig {
        base_url: format!("{base}/v1").parse().unwrap(),
        model_id: "fake".into(),
        max_retries: retries,
        backoff_base_ms: 5,
        request_timeout_ms: 2_000,
        ..BackendConfig::default()
    }
}

fn msgs() -> Vec<ChatMessage> {
    vec![ChatMessage::system("sys"), ChatMessage::user("hi")]
}

#[tokio::test]
async fn retries_until_third_attempt_succeeds() {
    let fake = Fake::new(2, StatusCode::SERVICE_UNAVAILABLE);
    let base = serve(fake.clone()).await;
    let backend = HttpBackend::new(config(&base, 3)).unwrap();
    let reply = backend.chat(&msgs()).await.unwrap();
    assert_eq!(reply.content, "reply 3");
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);
    assert_eq!(backend.telemetry(), Telemetry { requests: 1, attempts: 3, retries: 2 });
    let body = &fake.bodies.lock().unwrap()[0];
    assert_eq!(body["model"], "fake");
    assert_eq!(body["seed"], 13);
    assert_eq!(body["temperature"], 0.0);
}

#[tokio::test]
async fn no_retries_means_one_attempt() {
    let fake = Fake::new(5, StatusCode::SERVICE_UNAVAILABLE);
    let base = serve(fake.clone()).await;
    let backend = HttpBackend::new(config(&base, 0)).unwrap();
    let err = backend.chat(&msgs()).await.unwrap_err();
    assert_eq!(
        err,
        LlmError::BackendError { status: Some(503), attempts: 1, message: "unavailable".into() }
    );
    assert_eq!(fake.hits.load(Ordering::SeqCst), 1);
    assert_eq!(backend.telemetry().retries, 0);
}

#[tokio::test]
async fn retries_exhausted_reports_attempts() {
    let fake = Fake::new(10, StatusCode::TOO_MANY_REQUESTS);
    let base = serve(fake.clone()).await;
    let backend = HttpBackend::new(config(&base, 2)).unwrap();
    match backend.chat(&msgs()).await {
        Err(LlmError::BackendError { status: Some(429), attempts: 3, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let fake = Fake::new(10, StatusCode::BAD_REQUEST);
    let base = serve(fake.clone()).await;
    let backend = HttpBackend::new(config(&base, 3)).unwrap();
    assert!(matches!(
        backend.chat(&msgs()).await,
        Err(LlmError::BackendError { status: Some(400), attempts: 1, .. })
    ));
    assert_eq!(fake.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn slow_server_times_out() {
    let mut fake = Fake::new(0, StatusCode::OK);
    fake.delay = Duration::from_millis(500);
    let base = serve(fake.clone()).await;
    let mut cfg = config(&base, 1);
    cfg.request_timeout_ms = 100;
    let backend = HttpBackend::new(cfg).unwrap();
    assert_eq!(backend.chat(&msgs()).await, Err(LlmError::Timeout { attempts: 2 }));
}

#[tokio::test]
async fn streaming_sse_deltas() {
    let fake = Fake::new(0, StatusCode::OK);
    let base = serve(fake).await;
    let backend = HttpBackend::new(config(&base, 0)).unwrap();
    let mut deltas = Vec::new();
    let reply = backend.chat_stream(&msgs(), &mut |d: &str| deltas.push(d.to_string())).await.unwrap();
    assert_eq!(deltas, ["<think>hmm</think>Hel", "lo"]);
    assert_eq!(reply.content, "Hello");
}

#[tokio::test]
async fn ollama_native_api() {
    let fake = Fake::new(0, StatusCode::OK);
    let base = serve(fake.clone()).await;
    let cfg = BackendConfig { base_url: base.parse().unwrap(), api: ApiFlavor::Ollama, ..config(&base, 0) };
    let backend = HttpBackend::new(cfg).unwrap();
    assert_eq!(backend.chat(&msgs()).await.unwrap().content, "native");
    let mut deltas = String::new();
    let reply = backend.chat_stream(&msgs(), &mut |d: &str| deltas.push_str(d)).await.unwrap();
    assert_eq!((deltas.as_str(), reply.content.as_str()), ("ab", "ab"));
    let body = &fake.bodies.lock().unwrap()[0];
    assert_eq!(body["options"]["seed"], 13);
}

#[tokio::test]
async fn unreachable_server_is_backend_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let backend = HttpBackend::new(config(&base, 1)).unwrap();
    assert!(matches!(
        backend.chat(&msgs()).await,
        Err(LlmError::BackendError { status: None, attempts: 2, .. })
    ));
}
