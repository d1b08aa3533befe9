//! Chat-completion backends.
//!
//! [`ChatBackend`] is the one abstraction the orchestrator and the session
//! service talk to. [`HttpBackend`] speaks the OpenAI-compatible
//! `chat/completions` shape or the native Ollama `api/chat` shape;
//! [`ScriptedMock`] replays a fixed script for deterministic tests.

mod config;
mod http;
mod mock;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ApiFlavor, BackendConfig, BackendFactory, BackendSpec, ScriptFile};
pub use http::{HttpBackend, Telemetry};
pub use mock::{ScriptStep, ScriptedMock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Assistant, content)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("backend error after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    BackendError { status: Option<u16>, attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("scripted backend exhausted after {calls} call(s)")]
    ScriptExhausted { calls: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend returned an empty reply")]
    EmptyReply,
    #[error("configuration: {0}")]
    Config(String),
}

/// Messages must be non-empty and open with the system prompt; user and
/// assistant messages must carry text.
pub fn validate_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.first() {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role != ChatRole::System => {
            return Err(LlmError::InvalidRequest("first message must be the system prompt".into()))
        }
        _ => {}
    }
    if let Some(i) = messages.iter().position(|m| m.role != ChatRole::System && m.content.trim().is_empty()) {
        return Err(LlmError::InvalidRequest(format!("message {i} is empty")));
    }
    Ok(())
}

/// A chat-completion backend. Implementations must tolerate concurrent
/// calls.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    async fn chat(&self, messages: &[ChatMessage]) -> Result<ChatMessage, LlmError>;

    /// Streams the reply through `on_delta` and returns the full message.
    /// On error, any text already passed to `on_delta` must be discarded by
    /// the caller.
    async fn chat_stream(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'d> FnMut(&'d str) + Send),
    ) -> Result<ChatMessage, LlmError> {
        let reply = self.chat(messages).await?;
        on_delta(&reply.content);
        Ok(reply)
    }
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    async fn chat(&self, messages: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        (**self).chat(messages).await
    }

    async fn chat_stream(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'d> FnMut(&'d str) + Send),
    ) -> Result<ChatMessage, LlmError> {
        (**self).chat_stream(messages, on_delta).await
    }
}

/// Removes `<think>...</think>` blocks emitted by reasoning models.
pub fn strip_reasoning(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("<think>") {
        out.push_str(&rest[..start]);
        match rest[start..].find("</think>") {
            Some(end) => rest = &rest[start + end + "</think>".len()..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    out.trim().to_string()
}
