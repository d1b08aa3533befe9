use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use futures::StreamExt;
use serde::Serialize;
use serde_json::{json, Value};
use url::Url;

use super::{strip_reasoning, validate_messages, ApiFlavor, BackendConfig, ChatBackend, ChatMessage, LlmError};

/// Request counters, readable at any time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Telemetry {
    pub requests: u64,
    pub attempts: u64,
    pub retries: u64,
}

#[derive(Debug)]
pub struct HttpBackend {
    config: BackendConfig,
    endpoint: Url,
    client: reqwest::Client,
    requests: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
}

fn endpoint(config: &BackendConfig) -> Result<Url, LlmError> {
    let mut base = config.base_url.clone();
    if !base.path().ends_with('/') {
        let path = format!("{}/", base.path());
        base.set_path(&path);
    }
    let tail = match config.api {
        ApiFlavor::OpenAi => "chat/completions",
        ApiFlavor::Ollama => "api/chat",
    };
    base.join(tail).map_err(|e| LlmError::Config(e.to_string()))
}

fn truncate(mut s: String, max: usize) -> String {
    if s.len() > max {
        let mut cut = max;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push_str("...");
    }
    s
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .connect_timeout(config.request_timeout())
            .read_timeout(config.request_timeout())
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint(&config)?,
            config,
            client,
            requests: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn endpoint(&self) -> &Url {
        &self.endpoint
    }

    /// Backoff before retry `k` (1-based): `backoff_base * 2^(k-1)`.
    pub fn backoff_for(&self, k: u32) -> Duration {
        self.config.backoff_base().saturating_mul(1u32 << k.saturating_sub(1).min(16))
    }

    pub fn telemetry(&self) -> Telemetry {
        Telemetry {
            requests: self.requests.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }

    fn body(&self, messages: &[ChatMessage], stream: bool) -> Value {
        let c = &self.config;
        match c.api {
            ApiFlavor::OpenAi => {
                let mut body = json!({
                    "model": c.model_id,
                    "messages": messages,
                    "temperature": c.temperature,
                    "max_tokens": c.max_tokens,
                    "stream": stream,
                });
                if let Some(seed) = c.seed {
                    body["seed"] = json!(seed);
                }
                body
            }
            ApiFlavor::Ollama => {
                let mut options = json!({ "temperature": c.temperature, "num_predict": c.max_tokens });
                if let Some(seed) = c.seed {
                    options["seed"] = json!(seed);
                }
                json!({ "model": c.model_id, "messages": messages, "stream": stream, "options": options })
            }
        }
    }

    /// Sends with retries on transport errors, timeouts, 429 and 5xx.
    /// Returns the successful response and the attempt number.
    async fn send(&self, body: &Value, whole_timeout: bool) -> Result<(reqwest::Response, u32), LlmError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let mut req = self.client.post(self.endpoint.clone()).json(body);
            if whole_timeout {
                req = req.timeout(self.config.request_timeout());
            }
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            let err = match req.send().await {
                Ok(resp) if resp.status().is_success() => return Ok((resp, attempt)),
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().await.unwrap_or_default();
                    let err = LlmError::BackendError {
                        status: Some(status.as_u16()),
                        attempts: attempt,
                        message: truncate(text, 300),
                    };
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(err);
                    }
                    err
                }
                Err(e) if e.is_timeout() => LlmError::Timeout { attempts: attempt },
                Err(e) => LlmError::BackendError { status: None, attempts: attempt, message: e.to_string() },
            };
            if attempt > self.config.max_retries {
                return Err(err);
            }
            self.retries.fetch_add(1, Ordering::Relaxed);
            let delay = self.backoff_for(attempt);
            tracing::debug!(attempt, ?delay, error = %err, "retrying chat request");
            tokio::time::sleep(delay).await;
        }
    }

    fn finish(&self, content: String, attempts: u32) -> Result<ChatMessage, LlmError> {
        let content = if self.config.strip_reasoning { strip_reasoning(&content) } else { content };
        if content.trim().is_empty() {
            tracing::warn!(attempts, model = %self.config.model_id, "empty reply");
            return Err(LlmError::EmptyReply);
        }
        Ok(ChatMessage::assistant(content))
    }
}

fn decode_error(attempts: u32, message: impl Into<String>) -> LlmError {
    LlmError::BackendError { status: None, attempts, message: message.into() }
}

fn reply_text(api: ApiFlavor, v: &Value) -> Option<&str> {
    match api {
        ApiFlavor::OpenAi => v.pointer("/choices/0/message/content")?.as_str(),
        ApiFlavor::Ollama => v.pointer("/message/content")?.as_str(),
    }
}

/// Parses one streamed line; returns the text delta and whether the
/// stream is finished.
fn stream_line(api: ApiFlavor, line: &str) -> Result<(Option<String>, bool), String> {
    let line = line.trim();
    if line.is_empty() {
        return Ok((None, false));
    }
    match api {
        ApiFlavor::OpenAi => {
            let Some(data) = line.strip_prefix("data:") else {
                return Ok((None, false));
            };
            let data = data.trim();
            if data == "[DONE]" {
                return Ok((None, true));
            }
            let v: Value = serde_json::from_str(data).map_err(|e| e.to_string())?;
            let delta = v.pointer("/choices/0/delta/content").and_then(Value::as_str).map(str::to_string);
            Ok((delta, false))
        }
        ApiFlavor::Ollama => {
            let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            if let Some(err) = v.get("error").and_then(Value::as_str) {
                return Err(err.to_string());
            }
            let delta = v.pointer("/message/content").and_then(Value::as_str).map(str::to_string);
            Ok((delta, v.get("done").and_then(Value::as_bool).unwrap_or(false)))
        }
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    async fn chat(&self, messages: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        validate_messages(messages)?;
        let (resp, attempts) = self.send(&self.body(messages, false), true).await?;
        let v: Value = resp.json().await.map_err(|e| decode_error(attempts, e.to_string()))?;
        let text = reply_text(self.config.api, &v)
            .ok_or_else(|| decode_error(attempts, "response has no message content"))?;
        self.finish(text.to_string(), attempts)
    }

    async fn chat_stream(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'d> FnMut(&'d str) + Send),
    ) -> Result<ChatMessage, LlmError> {
        validate_messages(messages)?;
        let (resp, attempts) = self.send(&self.body(messages, true), false).await?;
        let mut stream = resp.bytes_stream();
        let mut pending: Vec<u8> = Vec::new();
        let mut content = String::new();
        let mut done = false;
        while !done {
            let Some(chunk) = stream.next().await else { break };
            let chunk = chunk.map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout { attempts }
                } else {
                    decode_error(attempts, e.to_string())
                }
            })?;
            pending.extend_from_slice(&chunk);
            while let Some(pos) = pending.iter().position(|b| *b == b'\n') {
                let line: Vec<u8> = pending.drain(..=pos).collect();
                let line = String::from_utf8_lossy(&line);
                let (delta, finished) =
                    stream_line(self.config.api, &line).map_err(|e| decode_error(attempts, e))?;
                if let Some(d) = delta.filter(|d| !d.is_empty()) {
                    on_delta(&d);
                    content.push_str(&d);
                }
                if finished {
                    done = true;
                    break;
                }
            }
        }
        if !done && !pending.is_empty() {
            let line = String::from_utf8_lossy(&pending).into_owned();
            if let (Some(d), _) = stream_line(self.config.api, &line).map_err(|e| decode_error(attempts, e))? {
                on_delta(&d);
                content.push_str(&d);
            }
        }
        self.finish(content, attempts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_joins_paths() {
        let mut c = BackendConfig::default();
        c.base_url = Url::parse("http://h:1/v1").unwrap();
        assert_eq!(endpoint(&c).unwrap().as_str(), "http://h:1/v1/chat/completions");
        c.base_url = Url::parse("http://h:1/v1/").unwrap();
        assert_eq!(endpoint(&c).unwrap().as_str(), "http://h:1/v1/chat/completions");
        c.base_url = Url::parse("http://h:1").unwrap();
        c.api = ApiFlavor::Ollama;
        assert_eq!(endpoint(&c).unwrap().as_str(), "http://h:1/api/chat");
    }

    #[test]
    fn request_bodies() {
        let mut c = BackendConfig::default();
        let msgs = [ChatMessage::system("s"), ChatMessage::user("u")];
        let b = HttpBackend::new(c.clone()).unwrap().body(&msgs, false);
        assert_eq!(b["seed"], json!(13));
        assert_eq!(b["messages"][1], json!({"role": "user", "content": "u"}));
        c.api = ApiFlavor::Ollama;
        c.seed = None;
        let b = HttpBackend::new(c).unwrap().body(&msgs, true);
        assert_eq!(b["stream"], json!(true));
        assert!(b["options"].get("seed").is_none());
    }

    #[test]
    fn stream_lines() {
        let line = r#"data: {"choices":[{"delta":{"content":"Hel"}}]}"#;
        assert_eq!(stream_line(ApiFlavor::OpenAi, line), Ok((Some("Hel".into()), false)));
        assert_eq!(stream_line(ApiFlavor::OpenAi, "data: [DONE]"), Ok((None, true)));
        assert_eq!(stream_line(ApiFlavor::OpenAi, ": keep-alive"), Ok((None, false)));
        let line = r#"{"message":{"role":"assistant","content":"lo"},"done":true}"#;
        assert_eq!(stream_line(ApiFlavor::Ollama, line), Ok((Some("lo".into()), true)));
        assert!(stream_line(ApiFlavor::Ollama, r#"{"error":"oom"}"#).is_err());
    }

    #[test]
    fn backoff_doubles() {
        let mut c = BackendConfig::default();
        c.backoff_base_ms = 10;
        let b = HttpBackend::new(c).unwrap();
        assert_eq!(b.backoff_for(1), Duration::from_millis(10));
        assert_eq!(b.backoff_for(3), Duration::from_millis(40));
    }
}
