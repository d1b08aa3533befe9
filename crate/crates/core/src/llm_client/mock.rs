use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{validate_messages, ChatBackend, ChatMessage, LlmError};

/// One scripted response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Reply(String),
    /// Streams `partial` and then fails.
    PartialThenError { partial: String, error: String },
    Error { error: String },
}

impl From<&str> for ScriptStep {
    fn from(s: &str) -> Self {
        ScriptStep::Reply(s.to_string())
    }
}

impl From<String> for ScriptStep {
    fn from(s: String) -> Self {
        ScriptStep::Reply(s)
    }
}

#[derive(Debug, Default)]
struct State {
    cursor: usize,
    calls: Vec<Vec<ChatMessage>>,
}

/// Returns its script entries in order, one per call, and fails with
/// [`LlmError::ScriptExhausted`] afterwards. Calls are serialized so the
/// order is well defined under concurrency.
#[derive(Debug)]
pub struct ScriptedMock {
    model_id: String,
    steps: Vec<ScriptStep>,
    state: Mutex<State>,
}

impl ScriptedMock {
    pub fn new(model_id: impl Into<String>, steps: impl IntoIterator<Item = impl Into<ScriptStep>>) -> Self {
        Self {
            model_id: model_id.into(),
            steps: steps.into_iter().map(Into::into).collect(),
            state: Mutex::default(),
        }
    }

    pub fn from_replies(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::new("scripted", replies.into_iter().map(|r| ScriptStep::Reply(r.into())))
    }

    /// Every message list received so far, in call order.
    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.state.lock().expect("mock lock").calls.clone()
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.state.lock().expect("mock lock").cursor
    }

    fn take(&self, messages: &[ChatMessage]) -> Result<ScriptStep, LlmError> {
        validate_messages(messages)?;
        let mut st = self.state.lock().expect("mock lock");
        st.calls.push(messages.to_vec());
        let step = self
            .steps
            .get(st.cursor)
            .cloned()
            .ok_or(LlmError::ScriptExhausted { calls: st.calls.len() })?;
        st.cursor += 1;
        Ok(step)
    }
}

fn scripted_error(message: String) -> LlmError {
    LlmError::BackendError { status: None, attempts: 1, message }
}

#[async_trait]
impl ChatBackend for ScriptedMock {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn chat(&self, messages: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        match self.take(messages)? {
            ScriptStep::Reply(text) => Ok(ChatMessage::assistant(text)),
            ScriptStep::Error { error } | ScriptStep::PartialThenError { error, .. } => Err(scripted_error(error)),
        }
    }

    async fn chat_stream(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'d> FnMut(&'d str) + Send),
    ) -> Result<ChatMessage, LlmError> {
        match self.take(messages)? {
            ScriptStep::Reply(text) => {
                for chunk in text.split_inclusive(' ') {
                    on_delta(chunk);
                }
                Ok(ChatMessage::assistant(text))
            }
            ScriptStep::Error { error } => Err(scripted_error(error)),
            ScriptStep::PartialThenError { partial, error } => {
                on_delta(&partial);
                Err(scripted_error(error))
            }
        }
    }
}
