//! TOML configuration for `run` and `serve`.
//!
//! Precedence, lowest first: file, environment, flags.

use std::path::{Path, PathBuf};

use medsyn_core::llm_client::{BackendConfig, BackendSpec};
use medsyn_core::orchestrator::{DialogueConfig, RunCase};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_PHYSICIAN: &str = "MEDSYN_PHYSICIAN_";
pub const ENV_ASSISTANT: &str = "MEDSYN_ASSISTANT_";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub run: Option<RunConfig>,
    pub serve: Option<ServeConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: RunCase,
    pub physician: BackendSpec,
    pub assistant: Option<BackendSpec>,
    pub records: PathBuf,
    /// Sample size; all records when unset.
    pub sample_n: Option<usize>,
    pub seed: u64,
    pub max_turns: usize,
    pub max_nudges: usize,
    pub out: PathBuf,
    pub concurrency: usize,
    /// `run` exits with status 2 when the failed fraction exceeds this.
    pub failure_threshold: f64,
    pub templates: Option<PathBuf>,
    /// Code table CSV, or `bundled` for the built-in sample.
    pub code_table: Option<String>,
    /// Record zero wall time for every turn so transcripts are byte-stable.
    pub frozen_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: RunCase::TwoAgent,
            physician: BackendSpec::default(),
            assistant: None,
            records: PathBuf::from("records.jsonl"),
            sample_n: None,
            seed: 13,
            max_turns: DialogueConfig::default().max_turns,
            max_nudges: DialogueConfig::default().max_nudges,
            out: PathBuf::from("runs/run"),
            concurrency: 4,
            failure_threshold: 0.5,
            templates: None,
            code_table: None,
            frozen_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub records: PathBuf,
    pub addr: String,
    pub assistant: BackendSpec,
    /// Drives two-agent sessions created through the service.
    pub physician: Option<BackendSpec>,
    pub max_turns: usize,
    pub max_nudges: usize,
    pub sessions_dir: Option<PathBuf>,
    pub runs_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub code_table: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            records: PathBuf::from("records.jsonl"),
            addr: "127.0.0.1:8080".into(),
            assistant: BackendSpec::default(),
            physician: None,
            max_turns: DialogueConfig::default().max_turns,
            max_nudges: DialogueConfig::default().max_nudges,
            sessions_dir: None,
            runs_dir: None,
            static_dir: None,
            templates: None,
            code_table: None,
        }
    }
}

impl RunConfig {
    pub fn dialogue(&self) -> DialogueConfig {
        DialogueConfig { max_turns: self.max_turns, max_nudges: self.max_nudges }
    }
}

impl ServeConfig {
    pub fn dialogue(&self) -> DialogueConfig {
        DialogueConfig { max_turns: self.max_turns, max_nudges: self.max_nudges }
    }
}

/// Command-line overrides for one backend.
#[derive(Debug, Clone, Default)]
pub struct BackendFlags {
    pub script: Option<PathBuf>,
    pub url: Option<String>,
    pub model: Option<String>,
}

impl BackendFlags {
    pub fn is_set(&self) -> bool {
        self.script.is_some() || self.url.is_some() || self.model.is_some()
    }
}

/// Applies environment then flags to a backend spec. A script flag
/// replaces the spec outright; URL and model flags turn it into an HTTP
/// backend.
pub fn resolve_backend(
    base: Option<BackendSpec>,
    flags: &BackendFlags,
    env_prefix: &str,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<Option<BackendSpec>, CliError> {
    if let Some(script) = &flags.script {
        return Ok(Some(BackendSpec::Scripted { script: script.clone() }));
    }
    let env_set = ["BASE_URL", "MODEL"].iter().any(|k| lookup(&format!("{env_prefix}{k}")).is_some());
    let mut spec = match base {
        Some(spec) => spec,
        None if flags.is_set() || env_set => BackendSpec::Http(BackendConfig::default()),
        None => return Ok(None),
    };
    if let BackendSpec::Http(cfg) = &mut spec {
        cfg.apply_env(env_prefix, &lookup).map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some(url) = &flags.url {
            cfg.base_url = url.parse().map_err(|e| CliError::Validation(format!("backend url `{url}`: {e}")))?;
        }
        if let Some(model) = &flags.model {
            cfg.model_id = model.clone();
        }
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    } else if flags.url.is_some() || flags.model.is_some() {
        return Err(CliError::Validation("backend URL/model flags conflict with a scripted backend".into()));
    }
    Ok(Some(spec))
}
