use super::{Clock, Dialogue, DialogueConfig, Next, OrchestratorError, RunCase, SessionOutcome, Templates};
use crate::llm_client::ChatBackend;
use crate::record_pipeline::ClinicalRecord;

/// Runs one fully automated session to completion.
///
/// Backend failures end the session with a `backend_error` outcome, except
/// for the optional closing reply after a discharge.
pub async fn run_dialogue(
    case: RunCase,
    record: &ClinicalRecord,
    physician: &dyn ChatBackend,
    assistant: Option<&dyn ChatBackend>,
    config: &DialogueConfig,
    templates: &Templates,
    clock: &dyn Clock,
) -> Result<SessionOutcome, OrchestratorError> {
    match (case, assistant.is_some()) {
        (RunCase::HumanInLoop, _) => {
            return Err(OrchestratorError::InvalidConfig("human_in_loop sessions are driven by the service".into()))
        }
        (RunCase::TwoAgent, false) => {
            return Err(OrchestratorError::InvalidConfig("two_agent needs an assistant backend".into()))
        }
        (c, true) if c.is_baseline() => {
            return Err(OrchestratorError::InvalidConfig(format!("{c} takes no assistant backend")))
        }
        _ => {}
    }
    let mut dialogue = Dialogue::new(case, record, templates, *config)?;
    loop {
        let started = clock.now();
        match dialogue.next() {
            Next::Done => break,
            Next::Physician => match physician.chat(&dialogue.physician_messages()).await {
                Ok(reply) if reply.content.trim().is_empty() => dialogue.backend_failed("physician returned an empty reply")?,
                Ok(reply) => dialogue.accept_physician(&reply.content, clock.now().saturating_sub(started))?,
                Err(e) => dialogue.backend_failed(format!("physician: {e}"))?,
            },
            Next::Assistant => {
                let Some(backend) = assistant else { unreachable!("checked above") };
                match backend.chat(&dialogue.assistant_messages()).await {
                    Ok(reply) if reply.content.trim().is_empty() => dialogue.backend_failed("assistant returned an empty reply")?,
                    Ok(reply) => dialogue.accept_assistant(&reply.content, clock.now().saturating_sub(started))?,
                    Err(e) => dialogue.backend_failed(format!("assistant: {e}"))?,
                }
            }
        }
    }
    tracing::debug!(record = %record.record_id, %case, state = dialogue.state_name(), turns = dialogue.turn_count(), "session finished");
    dialogue.into_outcome()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::CodeTable;
    use crate::llm_client::{ScriptStep, ScriptedMock};
    use crate::orchestrator::{FailureReason, FrozenClock, Role, TranscriptEntry};
    use crate::record_pipeline::{generate_synthetic, SynthConfig};

    fn record() -> ClinicalRecord {
        generate_synthetic(21, 1, &CodeTable::bundled_sample(), &SynthConfig::default()).remove(0)
    }

    const CALL: &str = r#"{"tool": "discharge_text_tool", "diagnosis": "Essential hypertension", "codes": "I10"}"#;

    async fn run(case: RunCase, phys: &ScriptedMock, asst: Option<&ScriptedMock>, cfg: DialogueConfig) -> SessionOutcome {
        run_dialogue(
            case,
            &record(),
            phys,
            asst.map(|a| a as &dyn ChatBackend),
            &cfg,
            &Templates::builtin(),
            &FrozenClock,
        )
        .await
        .unwrap()
    }

    #[tokio::test]
    async fn four_physician_messages_give_eight_turns() {
        let phys = ScriptedMock::new("phys", ["Q1", "Q2", "Q3", CALL]);
        let asst = ScriptedMock::new("asst", ["A1", "A2", "A3", "Closing."]);
        let out = run(RunCase::TwoAgent, &phys, Some(&asst), DialogueConfig::default()).await;
        assert_eq!(out.turn_count(), 8);
        assert_eq!(out.discharge().unwrap().codes_raw, "I10");
        assert_eq!(phys.remaining(), 0);
        assert_eq!(asst.remaining(), 0);
        for (i, t) in out.turns().enumerate() {
            assert_eq!(t.index, i + 1);
            assert_eq!(t.role, if i % 2 == 0 { Role::ChiefPhysician } else { Role::Assistant });
        }
    }

    #[tokio::test]
    async fn baseline_is_one_turn() {
        let call = CALL.replace("discharge_text_tool", "baseline_discharge_text_tool");
        let phys = ScriptedMock::new("phys", [call.as_str()]);
        let out = run(RunCase::BaselineComplaint, &phys, None, DialogueConfig::default()).await;
        assert_eq!(out.turn_count(), 1);
        assert!(out.discharge().is_some());
    }

    #[tokio::test]
    async fn never_calling_tool_hits_cap() {
        let phys = ScriptedMock::new("phys", vec!["More?"; 10]);
        let asst = ScriptedMock::new("asst", vec!["Sure."; 10]);
        let cfg = DialogueConfig { max_turns: 10, max_nudges: 2 };
        let out = run(RunCase::TwoAgent, &phys, Some(&asst), cfg).await;
        assert_eq!(out.failure(), Some(FailureReason::MaxTurns));
        assert_eq!(out.turn_count(), 10);
    }

    #[tokio::test]
    async fn malformed_calls_exhaust_retries() {
        let bad = r#"{"tool": "discharge_text_tool", "diagnosis": "x"}"#;
        let phys = ScriptedMock::new("phys", [bad, bad, bad]);
        let asst = ScriptedMock::new("asst", Vec::<ScriptStep>::new());
        let out = run(RunCase::TwoAgent, &phys, Some(&asst), DialogueConfig::default()).await;
        assert_eq!(out.failure(), Some(FailureReason::ToolCallRetriesExhausted));
        assert_eq!(out.nudge_count(), 2);
        assert_eq!(out.turn_count(), 1);
        assert_eq!(out.transcript.iter().filter(|e| matches!(e, TranscriptEntry::Rejected { .. })).count(), 2);
    }

    #[tokio::test]
    async fn backend_error_is_recorded() {
        let phys = ScriptedMock::new("phys", vec![ScriptStep::Reply("Q1".into()), ScriptStep::Error { error: "boom".into() }]);
        let asst = ScriptedMock::new("asst", ["A1"]);
        let out = run(RunCase::TwoAgent, &phys, Some(&asst), DialogueConfig::default()).await;
        assert_eq!(out.failure(), Some(FailureReason::BackendError));
        assert_eq!(out.turn_count(), 2);
    }

    #[tokio::test]
    async fn closing_error_still_discharges() {
        let phys = ScriptedMock::new("phys", [CALL]);
        let asst = ScriptedMock::new("asst", Vec::<ScriptStep>::new());
        let out = run(RunCase::TwoAgent, &phys, Some(&asst), DialogueConfig::default()).await;
        assert!(out.discharge().is_some());
        assert_eq!(out.turn_count(), 1);
    }

    #[tokio::test]
    async fn case_backend_mismatch_rejected() {
        let phys = ScriptedMock::new("phys", [CALL]);
        let cfg = DialogueConfig::default();
        let t = Templates::builtin();
        let r = record();
        for (case, asst) in [(RunCase::TwoAgent, None), (RunCase::HumanInLoop, Some(&phys as &dyn ChatBackend)), (RunCase::BaselineFullNote, Some(&phys as &dyn ChatBackend))] {
            let res = run_dialogue(case, &r, &phys, asst, &cfg, &t, &FrozenClock).await;
            assert!(matches!(res, Err(OrchestratorError::InvalidConfig(_))), "{case}");
        }
    }
}
