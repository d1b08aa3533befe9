//! Physician/assistant dialogue orchestration.
//!
//! [`Dialogue`] is a step-wise state machine that owns the transcript and
//! decides whose turn it is; [`run_dialogue`] drives it with two
//! [`ChatBackend`](crate::llm_client::ChatBackend)s, while the session
//! service drives the same machine with a human in the physician seat.
//!
//! A turn is one message by either participant. Nudges (corrective
//! instructions after a malformed discharge attempt) are kept in the
//! transcript but never counted. In dialogue cases the physician's
//! discharge tool call is followed by one closing reply from the assistant,
//! so a run of `k` physician messages yields `2k` turns.

mod dialogue;
pub mod leakage;
mod prompts;
mod runner;
mod tool_call;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dialogue::{Dialogue, Next};
pub use prompts::{build_prompts, Prompts, Templates, TEMPLATE_FILES};
pub use runner::run_dialogue;
pub use tool_call::{extract_tool_call, looks_terminal, strip_tool_call, DischargeText, TOOL_DIALOGUE, TOOL_BASELINE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunCase {
    BaselineComplaint,
    BaselineFullNote,
    TwoAgent,
    HumanInLoop,
}

impl RunCase {
    pub const ALL: [RunCase; 4] =
        [RunCase::BaselineComplaint, RunCase::TwoAgent, RunCase::BaselineFullNote, RunCase::HumanInLoop];

    pub fn is_baseline(self) -> bool {
        matches!(self, RunCase::BaselineComplaint | RunCase::BaselineFullNote)
    }

    /// Cases with an assistant agent.
    pub fn has_assistant(self) -> bool {
        !self.is_baseline()
    }

    pub fn expected_tool(self) -> &'static str {
        if self.is_baseline() {
            TOOL_BASELINE
        } else {
            TOOL_DIALOGUE
        }
    }

    /// Row label in comparison tables.
    pub fn table_label(self) -> &'static str {
        match self {
            RunCase::BaselineComplaint => "phy w/complaint",
            RunCase::TwoAgent => "two-agent",
            RunCase::BaselineFullNote => "phy w/full_note",
            RunCase::HumanInLoop => "human-in-loop",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunCase::BaselineComplaint => "baseline_complaint",
            RunCase::BaselineFullNote => "baseline_full_note",
            RunCase::TwoAgent => "two_agent",
            RunCase::HumanInLoop => "human_in_loop",
        }
    }

    fn rank(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap_or(usize::MAX)
    }
}

impl PartialOrd for RunCase {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Table order: complaint, two-agent, full note, human.
impl Ord for RunCase {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for RunCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "baselinecomplaint" | "complaint" | "phywcomplaint" => Ok(RunCase::BaselineComplaint),
            "baselinefullnote" | "fullnote" | "phywfullnote" => Ok(RunCase::BaselineFullNote),
            "twoagent" => Ok(RunCase::TwoAgent),
            "humaninloop" | "human" => Ok(RunCase::HumanInLoop),
            _ => Err(format!("unknown run case `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ChiefPhysician,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub index: usize,
    pub role: Role,
    pub content: String,
    pub is_tool_call: bool,
    pub wall_time_ms: u64,
    /// Physician turn whose reply failed; replaced on the next post.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unanswered: bool,
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Turn(DialogueTurn),
    /// A physician message that looked like a discharge attempt but did
    /// not parse. Not a turn.
    Rejected { content: String },
    /// Corrective instruction sent to the physician. Not a turn.
    Nudge { content: String },
}

impl TranscriptEntry {
    pub fn as_turn(&self) -> Option<&DialogueTurn> {
        match self {
            TranscriptEntry::Turn(t) => Some(t),
            _ => None,
        }
    }

    pub fn content(&self) -> &str {
        match self {
            TranscriptEntry::Turn(t) => &t.content,
            TranscriptEntry::Rejected { content } | TranscriptEntry::Nudge { content } => content,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    MaxTurns,
    ToolCallRetriesExhausted,
    BackendError,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::MaxTurns => "max_turns",
            FailureReason::ToolCallRetriesExhausted => "tool_call_retries_exhausted",
            FailureReason::BackendError => "backend_error",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Discharged { discharge: DischargeText },
    Failed { reason: FailureReason, error: String },
}

/// A finished session: outcome plus the full transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub record_id: String,
    pub case: RunCase,
    pub outcome: Outcome,
    pub transcript: Vec<TranscriptEntry>,
}

impl SessionOutcome {
    pub fn turns(&self) -> impl Iterator<Item = &DialogueTurn> {
        self.transcript.iter().filter_map(TranscriptEntry::as_turn)
    }

    pub fn turn_count(&self) -> usize {
        self.turns().count()
    }

    pub fn nudge_count(&self) -> usize {
        self.transcript.iter().filter(|e| matches!(e, TranscriptEntry::Nudge { .. })).count()
    }

    pub fn discharge(&self) -> Option<&DischargeText> {
        match &self.outcome {
            Outcome::Discharged { discharge } => Some(discharge),
            Outcome::Failed { .. } => None,
        }
    }

    pub fn failure(&self) -> Option<FailureReason> {
        match &self.outcome {
            Outcome::Failed { reason, .. } => Some(*reason),
            Outcome::Discharged { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub max_turns: usize,
    pub max_nudges: usize,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self { max_turns: 40, max_nudges: 2 }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrchestratorError {
    #[error("missing or invalid template `{0}`")]
    MissingTemplate(String),
    #[error("prompt for record {record_id} contains gold discharge content")]
    PromptLeak { record_id: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("`{action}` not allowed in state {state}")]
    InvalidTransition { action: &'static str, state: &'static str },
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
}

/// Time source for per-turn wall times.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

/// Monotonic time since construction.
#[derive(Debug, Clone)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Always reads zero, making transcripts byte-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_parsing_and_order() {
        assert_eq!("two-agent".parse::<RunCase>(), Ok(RunCase::TwoAgent));
        assert_eq!("phy w/full_note".parse::<RunCase>(), Ok(RunCase::BaselineFullNote));
        assert_eq!("baseline_complaint".parse::<RunCase>(), Ok(RunCase::BaselineComplaint));
        assert!("triage".parse::<RunCase>().is_err());
        let mut cases = vec![RunCase::BaselineFullNote, RunCase::TwoAgent, RunCase::BaselineComplaint];
        cases.sort();
        assert_eq!(cases, [RunCase::BaselineComplaint, RunCase::TwoAgent, RunCase::BaselineFullNote]);
        for c in RunCase::ALL {
            assert_eq!(c.as_str().parse::<RunCase>(), Ok(c));
        }
    }

    #[test]
    fn transcript_entry_json() {
        let e = TranscriptEntry::Turn(DialogueTurn {
            index: 1,
            role: Role::ChiefPhysician,
            content: "hi".into(),
            is_tool_call: false,
            wall_time_ms: 0,
            unanswered: false,
        });
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"turn","index":1,"role":"chief_physician","content":"hi","is_tool_call":false,"wall_time_ms":0}"#
        );
        assert_eq!(serde_json::from_str::<TranscriptEntry>(&json).unwrap(), e);
    }
}
