use std::time::Duration;

use super::{
    build_prompts, extract_tool_call, looks_terminal, strip_tool_call, DialogueConfig, DialogueTurn, DischargeText,
    FailureReason, OrchestratorError, Outcome, Prompts, Role, RunCase, SessionOutcome, Templates, TranscriptEntry,
};
use crate::llm_client::{ChatMessage, ChatRole};
use crate::record_pipeline::ClinicalRecord;

const CLOSING_FALLBACK: &str = "Thank you, Dr. Lee. I have what I need to write the discharge text.";

/// Who acts next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next {
    Physician,
    Assistant,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    AwaitPhysician,
    AwaitAssistant,
    /// Discharge accepted; the assistant gives one closing reply.
    AwaitClosing(DischargeText),
    Done(Outcome),
}

/// One session's dialogue state machine.
///
/// Physician and assistant messages strictly alternate, starting with the
/// physician. A physician message carrying a valid tool call discharges
/// the session; in dialogue cases the assistant then replies once more.
/// A message that looks like a botched discharge is rejected and answered
/// with a nudge (up to `max_nudges`); neither counts as a turn. One extra
/// wrap-up nudge is sent before the physician's last chance under
/// `max_turns`, if the nudge budget allows.
#[derive(Debug, Clone)]
pub struct Dialogue {
    record_id: String,
    case: RunCase,
    prompts: Prompts,
    nudge_text: String,
    wrap_up_text: String,
    config: DialogueConfig,
    transcript: Vec<TranscriptEntry>,
    nudges: usize,
    state: State,
}

impl Dialogue {
    pub fn new(
        case: RunCase,
        record: &ClinicalRecord,
        templates: &Templates,
        config: DialogueConfig,
    ) -> Result<Self, OrchestratorError> {
        let min_turns = if case.has_assistant() { 2 } else { 1 };
        if config.max_turns < min_turns {
            return Err(OrchestratorError::InvalidConfig(format!(
                "max_turns must be at least {min_turns} for {case}"
            )));
        }
        let tool = case.expected_tool();
        let mut d = Self {
            record_id: record.record_id.clone(),
            case,
            prompts: build_prompts(case, record, templates)?,
            nudge_text: templates.nudge_text(tool),
            wrap_up_text: templates.wrap_up_text(tool),
            config,
            transcript: Vec::new(),
            nudges: 0,
            state: State::AwaitPhysician,
        };
        d.maybe_wrap_up();
        Ok(d)
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn case(&self) -> RunCase {
        self.case
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub fn config(&self) -> DialogueConfig {
        self.config
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn turn_count(&self) -> usize {
        self.transcript.iter().filter(|e| e.as_turn().is_some()).count()
    }

    pub fn nudge_count(&self) -> usize {
        self.nudges
    }

    pub fn next(&self) -> Next {
        match self.state {
            State::AwaitPhysician => Next::Physician,
            State::AwaitAssistant | State::AwaitClosing(_) => Next::Assistant,
            State::Done(_) => Next::Done,
        }
    }

    pub fn state_name(&self) -> &'static str {
        match self.state {
            State::AwaitPhysician => "awaiting_physician",
            State::AwaitAssistant => "awaiting_assistant",
            State::AwaitClosing(_) => "awaiting_closing",
            State::Done(Outcome::Discharged { .. }) => "discharged",
            State::Done(Outcome::Failed { .. }) => "failed",
        }
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        match &self.state {
            State::Done(o) => Some(o),
            _ => None,
        }
    }

    /// The accepted discharge, once the physician has submitted one.
    pub fn discharge(&self) -> Option<&DischargeText> {
        match &self.state {
            State::AwaitClosing(d) | State::Done(Outcome::Discharged { discharge: d }) => Some(d),
            _ => None,
        }
    }

    pub fn into_outcome(self) -> Result<SessionOutcome, OrchestratorError> {
        match self.state {
            State::Done(outcome) => Ok(SessionOutcome {
                record_id: self.record_id,
                case: self.case,
                outcome,
                transcript: self.transcript,
            }),
            _ => Err(OrchestratorError::InvalidTransition { action: "finish", state: "open" }),
        }
    }

    fn invalid(&self, action: &'static str) -> OrchestratorError {
        OrchestratorError::InvalidTransition { action, state: self.state_name() }
    }

    fn push_turn(&mut self, role: Role, content: &str, is_tool_call: bool, elapsed: Duration) -> usize {
        let index = self.turn_count() + 1;
        self.transcript.push(TranscriptEntry::Turn(DialogueTurn {
            index,
            role,
            content: content.to_string(),
            is_tool_call,
            wall_time_ms: elapsed.as_millis().try_into().unwrap_or(u64::MAX),
            unanswered: false,
        }));
        index
    }

    fn finish(&mut self, outcome: Outcome) {
        self.state = State::Done(outcome);
    }

    fn fail(&mut self, reason: FailureReason, error: impl Into<String>) {
        self.finish(Outcome::Failed { reason, error: error.into() });
    }

    fn maybe_wrap_up(&mut self) {
        let next_index = self.turn_count() + 1;
        let last_chance = self.case.has_assistant() && next_index + 2 > self.config.max_turns;
        let already = self.transcript.iter().any(|e| matches!(e, TranscriptEntry::Nudge { content } if *content == self.wrap_up_text));
        if self.case == RunCase::TwoAgent && last_chance && !already && self.nudges < self.config.max_nudges {
            self.transcript.push(TranscriptEntry::Nudge { content: self.wrap_up_text.clone() });
            self.nudges += 1;
        }
    }

    /// Messages for the simulated physician's next call.
    pub fn physician_messages(&self) -> Vec<ChatMessage> {
        let mut msgs = vec![
            ChatMessage::system(&self.prompts.physician_system),
            ChatMessage::user(&self.prompts.physician_kickoff),
        ];
        for e in &self.transcript {
            let m = match e {
                TranscriptEntry::Turn(t) if t.role == Role::ChiefPhysician => ChatMessage::assistant(&t.content),
                TranscriptEntry::Turn(t) => ChatMessage::user(&t.content),
                TranscriptEntry::Rejected { content } => ChatMessage::assistant(content),
                TranscriptEntry::Nudge { content } => ChatMessage::user(content),
            };
            push_merged(&mut msgs, m);
        }
        msgs
    }

    /// Messages for the assistant's next call. Nudges and tool-call JSON
    /// are never shown to the assistant.
    pub fn assistant_messages(&self) -> Vec<ChatMessage> {
        let system = self.prompts.assistant_system.clone().unwrap_or_default();
        let mut msgs = vec![ChatMessage::system(system)];
        let tool = self.case.expected_tool();
        for t in self.transcript.iter().filter_map(TranscriptEntry::as_turn) {
            let m = match t.role {
                Role::ChiefPhysician if t.is_tool_call => {
                    let text = strip_tool_call(&t.content, tool);
                    ChatMessage::user(if text.is_empty() { CLOSING_FALLBACK.to_string() } else { text })
                }
                Role::ChiefPhysician => ChatMessage::user(&t.content),
                Role::Assistant => ChatMessage::assistant(&t.content),
            };
            push_merged(&mut msgs, m);
        }
        msgs
    }

    /// Records a physician message. A pending unanswered physician turn is
    /// replaced.
    pub fn accept_physician(&mut self, content: &str, elapsed: Duration) -> Result<(), OrchestratorError> {
        if self.state != State::AwaitPhysician {
            return Err(self.invalid("physician message"));
        }
        let content = content.trim();
        if content.is_empty() {
            return Err(OrchestratorError::EmptyField("message"));
        }
        if matches!(self.transcript.last(), Some(TranscriptEntry::Turn(t)) if t.unanswered) {
            self.transcript.pop();
        }
        let tool = self.case.expected_tool();
        if self.case != RunCase::HumanInLoop {
            if let Some(discharge) = extract_tool_call(content, tool) {
                self.accept_discharge(content, discharge, elapsed);
                return Ok(());
            }
            if self.case.is_baseline() || looks_terminal(content, tool) {
                if self.nudges < self.config.max_nudges {
                    self.transcript.push(TranscriptEntry::Rejected { content: content.to_string() });
                    self.transcript.push(TranscriptEntry::Nudge { content: self.nudge_text.clone() });
                    self.nudges += 1;
                } else {
                    self.push_turn(Role::ChiefPhysician, content, false, elapsed);
                    self.fail(
                        FailureReason::ToolCallRetriesExhausted,
                        format!("no valid {tool} call after {} nudge(s)", self.nudges),
                    );
                }
                return Ok(());
            }
        }
        let index = self.push_turn(Role::ChiefPhysician, content, false, elapsed);
        if index >= self.config.max_turns {
            self.fail(FailureReason::MaxTurns, format!("no discharge within {} turns", self.config.max_turns));
        } else {
            self.state = State::AwaitAssistant;
        }
        Ok(())
    }

    /// Records a discharge submitted through a form (human physician).
    pub fn submit_discharge(&mut self, discharge: DischargeText, elapsed: Duration) -> Result<(), OrchestratorError> {
        if self.state != State::AwaitPhysician {
            return Err(self.invalid("discharge"));
        }
        if matches!(self.transcript.last(), Some(TranscriptEntry::Turn(t)) if t.unanswered) {
            self.transcript.pop();
        }
        let content = discharge.to_tool_message(self.case.expected_tool());
        self.accept_discharge(&content, discharge, elapsed);
        Ok(())
    }

    fn accept_discharge(&mut self, content: &str, discharge: DischargeText, elapsed: Duration) {
        let index = self.push_turn(Role::ChiefPhysician, content, true, elapsed);
        if self.case.has_assistant() && index < self.config.max_turns {
            self.state = State::AwaitClosing(discharge);
        } else {
            self.finish(Outcome::Discharged { discharge });
        }
    }

    pub fn accept_assistant(&mut self, content: &str, elapsed: Duration) -> Result<(), OrchestratorError> {
        let content = content.trim();
        if content.is_empty() {
            return Err(OrchestratorError::EmptyField("assistant message"));
        }
        match std::mem::replace(&mut self.state, State::AwaitPhysician) {
            State::AwaitAssistant => {
                let index = self.push_turn(Role::Assistant, content, false, elapsed);
                if index >= self.config.max_turns {
                    self.fail(FailureReason::MaxTurns, format!("no discharge within {} turns", self.config.max_turns));
                } else {
                    self.maybe_wrap_up();
                }
                Ok(())
            }
            State::AwaitClosing(discharge) => {
                self.push_turn(Role::Assistant, content, false, elapsed);
                self.finish(Outcome::Discharged { discharge });
                Ok(())
            }
            other => {
                self.state = other;
                Err(self.invalid("assistant message"))
            }
        }
    }

    /// A backend call failed. Fatal except for the closing reply, which
    /// is optional.
    pub fn backend_failed(&mut self, error: impl Into<String>) -> Result<(), OrchestratorError> {
        match std::mem::replace(&mut self.state, State::AwaitPhysician) {
            State::AwaitClosing(discharge) => self.finish(Outcome::Discharged { discharge }),
            State::AwaitPhysician | State::AwaitAssistant => self.fail(FailureReason::BackendError, error),
            done @ State::Done(_) => {
                self.state = done;
                return Err(self.invalid("backend failure"));
            }
        }
        Ok(())
    }

    /// The assistant reply to the last physician turn failed but the
    /// session stays open: the turn is marked unanswered and the next
    /// physician message replaces it.
    pub fn mark_unanswered(&mut self) -> Result<(), OrchestratorError> {
        match self.state {
            State::AwaitAssistant => {
                if let Some(TranscriptEntry::Turn(t)) = self.transcript.last_mut() {
                    t.unanswered = true;
                }
                self.state = State::AwaitPhysician;
                Ok(())
            }
            State::AwaitClosing(_) => self.backend_failed("closing reply failed"),
            _ => Err(self.invalid("mark unanswered")),
        }
    }

    /// Ends a session that is waiting for its closing reply.
    pub fn skip_closing(&mut self) -> Result<(), OrchestratorError> {
        match &self.state {
            State::AwaitClosing(d) => {
                let discharge = d.clone();
                self.finish(Outcome::Discharged { discharge });
                Ok(())
            }
            _ => Err(self.invalid("skip closing")),
        }
    }
}

fn push_merged(msgs: &mut Vec<ChatMessage>, m: ChatMessage) {
    match msgs.last_mut() {
        Some(last) if last.role == m.role && m.role != ChatRole::System => {
            last.content.push_str("\n\n");
            last.content.push_str(&m.content);
        }
        _ => msgs.push(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::CodeTable;
    use crate::record_pipeline::{generate_synthetic, SynthConfig};

    fn record() -> ClinicalRecord {
        generate_synthetic(8, 1, &CodeTable::bundled_sample(), &SynthConfig::default()).remove(0)
    }

    const CALL: &str = r#"{"tool": "discharge_text_tool", "diagnosis": "Hyperlipidemia", "codes": "E78.5"}"#;

    fn dialogue(case: RunCase, max_turns: usize, max_nudges: usize) -> Dialogue {
        Dialogue::new(case, &record(), &Templates::builtin(), DialogueConfig { max_turns, max_nudges }).unwrap()
    }

    #[test]
    fn alternation_and_closing_turn() {
        let mut d = dialogue(RunCase::TwoAgent, 40, 2);
        assert_eq!(d.next(), Next::Physician);
        d.accept_physician("Dr. Lee, your evaluation please.", Duration::ZERO).unwrap();
        assert_eq!(d.next(), Next::Assistant);
        assert!(d.accept_physician("again", Duration::ZERO).is_err());
        d.accept_assistant("Summary: ...", Duration::ZERO).unwrap();
        d.accept_physician(&format!("Thanks. {CALL}"), Duration::ZERO).unwrap();
        assert_eq!(d.next(), Next::Assistant);
        let view = d.assistant_messages();
        assert_eq!(view.last().unwrap().content, "Thanks.");
        d.accept_assistant("Agreed.", Duration::ZERO).unwrap();
        assert_eq!(d.next(), Next::Done);
        let out = d.into_outcome().unwrap();
        assert_eq!(out.turn_count(), 4);
        assert_eq!(out.discharge().unwrap().codes_raw, "E78.5");
        let roles: Vec<Role> = out.turns().map(|t| t.role).collect();
        assert_eq!(roles, [Role::ChiefPhysician, Role::Assistant, Role::ChiefPhysician, Role::Assistant]);
    }

    #[test]
    fn baseline_single_turn() {
        let mut d = Dialogue::new(RunCase::BaselineComplaint, &record(), &Templates::builtin(), DialogueConfig::default())
            .unwrap();
        d.accept_physician(&CALL.replace("discharge_text_tool", "baseline_discharge_text_tool"), Duration::ZERO)
            .unwrap();
        let out = d.into_outcome().unwrap();
        assert_eq!(out.turn_count(), 1);
        assert!(out.discharge().is_some());
    }

    #[test]
    fn baseline_prose_is_nudged_then_fails_with_one_turn() {
        let mut d = dialogue(RunCase::BaselineFullNote, 40, 2);
        for _ in 0..3 {
            d.accept_physician("I think it is hyperlipidemia.", Duration::ZERO).unwrap();
        }
        let out = d.into_outcome().unwrap();
        assert_eq!(out.failure(), Some(FailureReason::ToolCallRetriesExhausted));
        assert_eq!(out.turn_count(), 1);
        assert_eq!(out.nudge_count(), 2);
    }

    #[test]
    fn nudge_then_valid() {
        let mut d = dialogue(RunCase::TwoAgent, 40, 2);
        d.accept_physician(r#"{"tool": "discharge_text_tool", "diagnosis": ""}"#, Duration::ZERO).unwrap();
        assert_eq!(d.next(), Next::Physician);
        assert_eq!(d.nudge_count(), 1);
        let ctx = d.physician_messages();
        assert!(ctx.last().unwrap().content.contains("did not contain a valid call"));
        assert!(d.assistant_messages().iter().all(|m| !m.content.contains("did not contain")));
        d.accept_physician(CALL, Duration::ZERO).unwrap();
        d.accept_assistant("Noted.", Duration::ZERO).unwrap();
        let out = d.into_outcome().unwrap();
        assert_eq!(out.turn_count(), 2);
        assert_eq!(out.nudge_count(), 1);
    }

    #[test]
    fn max_turns_cap() {
        let mut d = dialogue(RunCase::TwoAgent, 10, 2);
        while d.next() != Next::Done {
            match d.next() {
                Next::Physician => d.accept_physician("More details?", Duration::ZERO).unwrap(),
                Next::Assistant => d.accept_assistant("Here they are.", Duration::ZERO).unwrap(),
                Next::Done => unreachable!(),
            }
        }
        let out = d.into_outcome().unwrap();
        assert_eq!(out.failure(), Some(FailureReason::MaxTurns));
        assert_eq!(out.turn_count(), 10);
        // the wrap-up nudge precedes physician turn 9
        let pos = out.transcript.iter().position(|e| matches!(e, TranscriptEntry::Nudge { .. })).unwrap();
        assert_eq!(out.transcript[..pos].iter().filter(|e| e.as_turn().is_some()).count(), 8);
    }

    #[test]
    fn closing_failure_still_discharges() {
        let mut d = dialogue(RunCase::TwoAgent, 40, 2);
        d.accept_physician(CALL, Duration::ZERO).unwrap();
        d.backend_failed("down").unwrap();
        let out = d.into_outcome().unwrap();
        assert!(out.discharge().is_some());
        assert_eq!(out.turn_count(), 1);
    }

    #[test]
    fn unanswered_turn_is_replaced() {
        let mut d = dialogue(RunCase::HumanInLoop, 40, 2);
        d.accept_physician("First question", Duration::ZERO).unwrap();
        d.mark_unanswered().unwrap();
        assert_eq!(d.next(), Next::Physician);
        d.accept_physician("First question, retried", Duration::ZERO).unwrap();
        assert_eq!(d.turn_count(), 1);
        d.accept_assistant("Answer", Duration::ZERO).unwrap();
        assert_eq!(d.turn_count(), 2);
        // human chat messages are never parsed as tool calls
        d.accept_physician(CALL, Duration::ZERO).unwrap();
        assert_eq!(d.next(), Next::Assistant);
    }

    #[test]
    fn tool_call_at_cap_skips_closing() {
        let mut d = dialogue(RunCase::TwoAgent, 3, 0);
        d.accept_physician("Q", Duration::ZERO).unwrap();
        d.accept_assistant("A", Duration::ZERO).unwrap();
        d.accept_physician(CALL, Duration::ZERO).unwrap();
        assert_eq!(d.next(), Next::Done);
        let out = d.into_outcome().unwrap();
        assert!(out.discharge().is_some());
        assert_eq!(out.turn_count(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            Dialogue::new(RunCase::TwoAgent, &record(), &Templates::builtin(), DialogueConfig { max_turns: 1, max_nudges: 2 }),
            Err(OrchestratorError::InvalidConfig(_))
        ));
    }
}
