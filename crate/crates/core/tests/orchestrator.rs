use std::time::Instant;

use medsyn_core::icd10::CodeTable;
use medsyn_core::llm_client::{ChatBackend, ScriptStep, ScriptedMock};
use medsyn_core::orchestrator::leakage::scan;
use medsyn_core::orchestrator::{
    extract_tool_call, run_dialogue, DialogueConfig, FailureReason, FrozenClock, Role, RunCase, SessionOutcome,
    Templates, TranscriptEntry, TOOL_BASELINE, TOOL_DIALOGUE,
};
use medsyn_core::record_pipeline::{generate_synthetic, ClinicalRecord, SynthConfig};
use proptest::prelude::*;

fn records(n: usize) -> Vec<ClinicalRecord> {
    generate_synthetic(13, n, &CodeTable::bundled_sample(), &SynthConfig::default())
}

fn call(tool: &str, codes: &str) -> String {
    format!(r#"I have enough. {{"tool": "{tool}", "diagnosis": "Working diagnosis", "codes": "{codes}"}}"#)
}

async fn run(
    case: RunCase,
    record: &ClinicalRecord,
    phys: &ScriptedMock,
    asst: Option<&ScriptedMock>,
    cfg: DialogueConfig,
) -> SessionOutcome {
    run_dialogue(case, record, phys, asst.map(|a| a as &dyn ChatBackend), &cfg, &Templates::builtin(), &FrozenClock)
        .await
        .unwrap()
}

#[derive(Debug, Clone)]
enum Move {
    Question,
    Malformed,
    Valid,
    Error,
}

fn moves() -> impl Strategy<Value = Vec<Move>> {
    proptest::collection::vec(
        prop_oneof![6 => Just(Move::Question), 2 => Just(Move::Malformed), 1 => Just(Move::Valid), 1 => Just(Move::Error)],
        1..25,
    )
}

fn step(m: &Move) -> ScriptStep {
    match m {
        Move::Question => ScriptStep::Reply("Dr. Lee, what else?".into()),
        Move::Malformed => ScriptStep::Reply(r#"{"tool": "discharge_text_tool", "diagnosis": ""}"#.into()),
        Move::Valid => ScriptStep::Reply(call(TOOL_DIALOGUE, "I10")),
        Move::Error => ScriptStep::Error { error: "down".into() },
    }
}

fn check_invariants(out: &SessionOutcome, cfg: DialogueConfig) -> Result<(), TestCaseError> {
    let turns: Vec<_> = out.turns().collect();
    prop_assert!(!turns.is_empty() || out.failure() == Some(FailureReason::BackendError));
    for (i, t) in turns.iter().enumerate() {
        prop_assert_eq!(t.index, i + 1);
        prop_assert_eq!(t.role, if i % 2 == 0 { Role::ChiefPhysician } else { Role::Assistant });
    }
    prop_assert!(turns.len() <= cfg.max_turns);
    prop_assert!(out.nudge_count() <= cfg.max_nudges);
    let tool_turns: Vec<_> = turns.iter().filter(|t| t.is_tool_call).collect();
    prop_assert!(tool_turns.len() <= 1);
    if let Some(t) = tool_turns.first() {
        let last_phys = turns.iter().rev().find(|t| t.role == Role::ChiefPhysician).unwrap();
        prop_assert_eq!(t.index, last_phys.index);
        prop_assert!(out.discharge().is_some());
        // replay reproduces the recorded discharge
        let replayed = extract_tool_call(&t.content, TOOL_DIALOGUE);
        prop_assert_eq!(replayed.as_ref(), out.discharge());
    } else {
        prop_assert!(out.discharge().is_none());
    }
    if out.failure() == Some(FailureReason::MaxTurns) {
        prop_assert_eq!(turns.len(), cfg.max_turns);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn two_agent_invariants(script in moves(), max_turns in 2usize..16, max_nudges in 0usize..3) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let record = &records(1)[0];
        let phys = ScriptedMock::new("phys", script.iter().map(step).collect::<Vec<_>>());
        let asst = ScriptedMock::new("asst", vec!["Here is more detail."; 30]);
        let cfg = DialogueConfig { max_turns, max_nudges };
        let out = rt.block_on(run(RunCase::TwoAgent, record, &phys, Some(&asst), cfg));
        check_invariants(&out, cfg)?;
        let json = serde_json::to_string(&out).unwrap();
        prop_assert_eq!(serde_json::from_str::<SessionOutcome>(&json).unwrap(), out);
    }
}

#[tokio::test]
async fn scripted_exchanges_give_two_k_turns() {
    let record = &records(1)[0];
    for k in 1..=8 {
        let mut script: Vec<String> = (1..k).map(|i| format!("Question {i}")).collect();
        script.push(call(TOOL_DIALOGUE, "E78.5"));
        let phys = ScriptedMock::new("phys", script);
        let asst = ScriptedMock::new("asst", (1..=k).map(|i| format!("Answer {i}")).collect::<Vec<_>>());
        let out = run(RunCase::TwoAgent, record, &phys, Some(&asst), DialogueConfig::default()).await;
        assert!(out.discharge().is_some());
        assert_eq!(out.turn_count(), 2 * k, "k={k}");
    }
}

#[tokio::test]
async fn transcripts_are_byte_reproducible() {
    let record = &records(1)[0];
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let phys = ScriptedMock::new("phys", ["Q", "{\"tool\": \"discharge_text_tool\"}", "Q2", &call(TOOL_DIALOGUE, "I10")]);
        let asst = ScriptedMock::new("asst", ["A", "A2", "bye"]);
        let out = run(RunCase::TwoAgent, record, &phys, Some(&asst), DialogueConfig::default()).await;
        bytes.push(serde_json::to_vec(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

/// Every prompt and every message sent to a backend is free of gold
/// content, as is every transcript entry before the discharge call.
#[tokio::test]
async fn no_gold_content_reaches_agents() {
    for record in records(25) {
        for case in [RunCase::BaselineComplaint, RunCase::BaselineFullNote, RunCase::TwoAgent] {
            let (phys, asst) = if case.is_baseline() {
                (ScriptedMock::new("p", ["Thinking.", &call(TOOL_BASELINE, "E78.5")]), None)
            } else {
                (
                    ScriptedMock::new("p", ["Dr. Lee, summary please.", "Any labs?", &call(TOOL_DIALOGUE, "E78.5")]),
                    Some(ScriptedMock::new("a", ["Summary.", "Labs unremarkable.", "Agreed."])),
                )
            };
            let out = run(case, &record, &phys, asst.as_ref(), DialogueConfig::default()).await;
            assert!(out.discharge().is_some(), "{case} {}", record.record_id);

            let sent = phys.calls().into_iter().chain(asst.iter().flat_map(|a| a.calls()));
            for messages in sent {
                for m in messages {
                    assert_eq!(scan(&m.content, &record), vec![], "{case} {} sent {:?}", record.record_id, m.role);
                }
            }
            for e in &out.transcript {
                if matches!(e, TranscriptEntry::Turn(t) if t.is_tool_call) {
                    break;
                }
                assert_eq!(scan(e.content(), &record), vec![], "{case} {}", record.record_id);
            }
        }
    }
}

#[tokio::test]
async fn fifty_sessions_are_fast() {
    let recs = records(50);
    let start = Instant::now();
    for (i, record) in recs.iter().enumerate() {
        let k = 1 + i % 10;
        let mut script: Vec<String> = (1..k).map(|j| format!("Q{j}")).collect();
        script.push(call(TOOL_DIALOGUE, "I10"));
        let phys = ScriptedMock::new("phys", script);
        let asst = ScriptedMock::new("asst", vec!["A"; k]);
        let out = run(RunCase::TwoAgent, record, &phys, Some(&asst), DialogueConfig::default()).await;
        assert_eq!(out.turn_count(), 2 * k);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}
