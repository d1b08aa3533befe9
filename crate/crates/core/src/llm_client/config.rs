use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{ChatBackend, HttpBackend, LlmError, ScriptStep, ScriptedMock};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiFlavor {
    /// `POST {base_url}/chat/completions`, base URL usually ending in `/v1`.
    #[default]
    OpenAi,
    /// `POST {base_url}/api/chat`.
    Ollama,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: Url,
    pub model_id: String,
    pub api: ApiFlavor,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_tokens: u32,
    pub request_timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Drop `<think>` blocks from replies.
    pub strip_reasoning: bool,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: Url::parse("http://127.0.0.1:11434/v1").expect("static url"),
            model_id: "llama3:8b".into(),
            api: ApiFlavor::OpenAi,
            temperature: 0.0,
            seed: Some(13),
            max_tokens: 1024,
            request_timeout_ms: 120_000,
            max_retries: 3,
            backoff_base_ms: 500,
            strip_reasoning: true,
            api_key: None,
        }
    }
}

impl BackendConfig {
    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    pub fn backoff_base(&self) -> Duration {
        Duration::from_millis(self.backoff_base_ms)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.request_timeout_ms == 0 {
            return Err(LlmError::Config("request timeout must be positive".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(LlmError::Config("model id is empty".into()));
        }
        Ok(())
    }

    /// Applies `{prefix}BASE_URL`, `{prefix}MODEL` and `{prefix}API_KEY`.
    pub fn apply_env(&mut self, prefix: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<(), LlmError> {
        if let Some(url) = lookup(&format!("{prefix}BASE_URL")) {
            self.base_url = Url::parse(&url).map_err(|e| LlmError::Config(format!("{prefix}BASE_URL: {e}")))?;
        }
        if let Some(model) = lookup(&format!("{prefix}MODEL")) {
            self.model_id = model;
        }
        if let Some(key) = lookup(&format!("{prefix}API_KEY")) {
            self.api_key = Some(key);
        }
        Ok(())
    }
}

/// A script file for [`ScriptedMock`] backends: a default script plus
/// optional per-record overrides. Each session gets a fresh mock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default = "scripted_model")]
    pub model_id: String,
    #[serde(default)]
    pub default: Vec<ScriptStep>,
    #[serde(default)]
    pub records: BTreeMap<String, Vec<ScriptStep>>,
}

fn scripted_model() -> String {
    "scripted".into()
}

impl ScriptFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
    }

    pub fn mock_for(&self, record_id: &str) -> ScriptedMock {
        let steps = self.records.get(record_id).unwrap_or(&self.default);
        ScriptedMock::new(self.model_id.clone(), steps.iter().cloned())
    }
}

/// How to obtain a backend: a live HTTP endpoint or a script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http(BackendConfig),
    Scripted { script: PathBuf },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Http(BackendConfig::default())
    }
}

/// Hands out one backend per session. HTTP backends are shared; scripted
/// ones are created fresh so every session replays its script from the
/// start.
#[derive(Clone)]
pub enum BackendFactory {
    Shared(Arc<dyn ChatBackend>),
    Scripted(Arc<ScriptFile>),
}

impl std::fmt::Debug for BackendFactory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendFactory::Shared(b) => f.debug_tuple("Shared").field(&b.model_id()).finish(),
            BackendFactory::Scripted(s) => f.debug_tuple("Scripted").field(&s.model_id).finish(),
        }
    }
}

impl BackendFactory {
    pub fn model_id(&self) -> &str {
        match self {
            BackendFactory::Shared(b) => b.model_id(),
            BackendFactory::Scripted(s) => &s.model_id,
        }
    }

    pub fn for_record(&self, record_id: &str) -> Arc<dyn ChatBackend> {
        match self {
            BackendFactory::Shared(b) => b.clone(),
            BackendFactory::Scripted(s) => Arc::new(s.mock_for(record_id)),
        }
    }
}

impl BackendSpec {
    pub fn model_id(&self) -> Option<&str> {
        match self {
            BackendSpec::Http(c) => Some(&c.model_id),
            BackendSpec::Scripted { .. } => None,
        }
    }

    pub fn factory(&self) -> Result<BackendFactory, LlmError> {
        match self {
            BackendSpec::Http(config) => Ok(BackendFactory::Shared(Arc::new(HttpBackend::new(config.clone())?))),
            BackendSpec::Scripted { script } => Ok(BackendFactory::Scripted(Arc::new(ScriptFile::load(script)?))),
        }
    }
}
