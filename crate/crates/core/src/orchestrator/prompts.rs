use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{leakage, OrchestratorError, RunCase};
use crate::record_pipeline::ClinicalRecord;

const NOTE_SLOT: &str = "{clinicalNote}";
const TOOL_SLOT: &str = "{toolName}";

/// Template file names, in the order they are hashed into run manifests.
pub const TEMPLATE_FILES: [&str; 6] = [
    "baseline.txt",
    "chief_physician.txt",
    "physician_assistant.txt",
    "tool_format.txt",
    "nudge.txt",
    "wrap_up.txt",
];

const BASELINE_KICKOFF: &str = "Write the discharge text for this patient.";
const DIALOGUE_KICKOFF: &str = "Dr. Lee is available. Begin the consultation.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub baseline: String,
    pub chief_physician: String,
    pub physician_assistant: String,
    /// Appended to physician prompts; describes the tool-call JSON.
    pub tool_format: String,
    pub nudge: String,
    pub wrap_up: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            baseline: include_str!("../../templates/baseline.txt").to_string(),
            chief_physician: include_str!("../../templates/chief_physician.txt").to_string(),
            physician_assistant: include_str!("../../templates/physician_assistant.txt").to_string(),
            tool_format: include_str!("../../templates/tool_format.txt").to_string(),
            nudge: include_str!("../../templates/nudge.txt").to_string(),
            wrap_up: include_str!("../../templates/wrap_up.txt").to_string(),
        }
    }

    /// Loads overrides from `dir`; files that are absent keep the built-in
    /// text.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(OrchestratorError::MissingTemplate(dir.display().to_string()));
        }
        let mut t = Self::builtin();
        for (name, slot) in TEMPLATE_FILES.iter().zip(t.slots_mut()) {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)
                    .map_err(|e| OrchestratorError::MissingTemplate(format!("{}: {e}", path.display())))?;
            }
        }
        t.validate()?;
        Ok(t)
    }

    fn slots(&self) -> [&String; 6] {
        [&self.baseline, &self.chief_physician, &self.physician_assistant, &self.tool_format, &self.nudge, &self.wrap_up]
    }

    fn slots_mut(&mut self) -> [&mut String; 6] {
        [
            &mut self.baseline,
            &mut self.chief_physician,
            &mut self.physician_assistant,
            &mut self.tool_format,
            &mut self.nudge,
            &mut self.wrap_up,
        ]
    }

    /// Each role prompt must carry exactly one note placeholder.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        for (name, text) in TEMPLATE_FILES.iter().zip(self.slots()).take(3) {
            if text.matches(NOTE_SLOT).count() != 1 {
                return Err(OrchestratorError::MissingTemplate(format!("{name}: needs exactly one {NOTE_SLOT}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of each template, keyed by file name.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        TEMPLATE_FILES
            .iter()
            .zip(self.slots())
            .map(|(name, text)| (name.to_string(), hex::encode(Sha256::digest(text.as_bytes()))))
            .collect()
    }

    pub fn nudge_text(&self, tool: &str) -> String {
        self.nudge.trim().replace(TOOL_SLOT, tool)
    }

    pub fn wrap_up_text(&self, tool: &str) -> String {
        self.wrap_up.trim().replace(TOOL_SLOT, tool)
    }
}

/// System prompts for one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub physician_system: String,
    pub assistant_system: Option<String>,
    /// First user message sent to a simulated physician.
    pub physician_kickoff: String,
}

fn fill(template: &str, note: &str) -> String {
    template.trim_end().replace(NOTE_SLOT, note.trim())
}

/// Builds the role prompts for `case`. The physician only ever sees the
/// chief complaint, except in the full-note baseline; the assistant sees
/// the note with every discharge section removed.
pub fn build_prompts(case: RunCase, record: &ClinicalRecord, templates: &Templates) -> Result<Prompts, OrchestratorError> {
    templates.validate()?;
    let tool = case.expected_tool();
    let tool_format = templates.tool_format.trim().replace(TOOL_SLOT, tool);
    let (physician, assistant) = match case {
        RunCase::BaselineComplaint => (fill(&templates.baseline, &record.chief_complaint), None),
        RunCase::BaselineFullNote => (fill(&templates.baseline, &record.redacted_note()), None),
        RunCase::TwoAgent | RunCase::HumanInLoop => (
            fill(&templates.chief_physician, &record.chief_complaint),
            Some(fill(&templates.physician_assistant, &record.redacted_note())),
        ),
    };
    let prompts = Prompts {
        physician_system: format!("{physician}\n\n{tool_format}"),
        assistant_system: assistant,
        physician_kickoff: if case.is_baseline() { BASELINE_KICKOFF } else { DIALOGUE_KICKOFF }.to_string(),
    };
    let texts = [Some(&prompts.physician_system), prompts.assistant_system.as_ref()];
    if texts.into_iter().flatten().any(|t| leakage::contains_gold_diagnosis(t, record)) {
        return Err(OrchestratorError::PromptLeak { record_id: record.record_id.clone() });
    }
    Ok(prompts)
}
