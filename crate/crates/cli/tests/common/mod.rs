#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medsyn_core::icd10::{parse_code_list, CodeTable};
use medsyn_core::llm_client::{ScriptFile, ScriptStep};
use medsyn_core::orchestrator::{TOOL_BASELINE, TOOL_DIALOGUE};
use medsyn_core::record_pipeline::{generate_synthetic, write_store, ClinicalRecord, SynthConfig};

pub const GOLD: &str = "E78.5, I10";
/// Predictions cycled over records: exact, partial, wrong category but
/// half the chapters, and a code absent from the table.
pub const PATTERNS: [&str; 4] = ["E78.5, I10", "E78.5", "E11.9, J18.9", "M3459"];

pub fn medsyn(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_medsyn"));
    for (k, _) in std::env::vars() {
        if k.starts_with("MEDSYN_") {
            cmd.env_remove(k);
        }
    }
    cmd.env("MEDSYN_LOG", "warn").args(args).output().expect("spawn medsyn")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Twenty synthetic records whose gold codes are all `GOLD`.
pub fn fixture_records() -> Vec<ClinicalRecord> {
    let mut recs = generate_synthetic(7, 20, &CodeTable::bundled_sample(), &SynthConfig::default());
    for r in &mut recs {
        r.gold_codes = parse_code_list(GOLD);
    }
    recs
}

pub fn write_fixture_store(dir: &Path) -> (PathBuf, Vec<ClinicalRecord>) {
    let recs = fixture_records();
    let path = dir.join("records.jsonl");
    write_store(&path, &recs).unwrap();
    (path, recs)
}

fn tool_call(tool: &str, codes: &str) -> String {
    serde_json::json!({ "tool": tool, "diagnosis": "see codes", "codes": codes }).to_string()
}

fn write_script(path: &Path, model: &str, default: Vec<ScriptStep>, records: BTreeMap<String, Vec<ScriptStep>>) {
    let script = ScriptFile { model_id: model.into(), default, records };
    std::fs::write(path, serde_json::to_vec_pretty(&script).unwrap()).unwrap();
}

pub fn pattern_for(i: usize) -> &'static str {
    PATTERNS[i % PATTERNS.len()]
}

/// Physician script for a baseline case: one tool call per record.
pub fn baseline_script(dir: &Path, recs: &[ClinicalRecord]) -> PathBuf {
    let path = dir.join("physician_baseline.json");
    let records = recs
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.clone(), vec![ScriptStep::Reply(tool_call(TOOL_BASELINE, pattern_for(i)))]))
        .collect();
    write_script(&path, "phys-mock", Vec::new(), records);
    path
}

/// Two-agent scripts: `questions` physician questions, then the tool call.
pub fn two_agent_scripts(dir: &Path, recs: &[ClinicalRecord], questions: usize) -> (PathBuf, PathBuf) {
    let phys = dir.join("physician_two_agent.json");
    let records = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut steps: Vec<ScriptStep> =
                (0..questions).map(|q| ScriptStep::Reply(format!("Question {q}: what else is notable?"))).collect();
            steps.push(ScriptStep::Reply(tool_call(TOOL_DIALOGUE, pattern_for(i))));
            (r.record_id.clone(), steps)
        })
        .collect();
    write_script(&phys, "phys-mock", Vec::new(), records);
    let asst = dir.join("assistant.json");
    let replies = (0..=questions).map(|q| ScriptStep::Reply(format!("Answer {q} from the note."))).collect();
    write_script(&asst, "asst-mock", replies, BTreeMap::new());
    (phys, asst)
}

pub fn prose_script(dir: &Path) -> PathBuf {
    let path = dir.join("prose.json");
    let steps = vec![ScriptStep::Reply("I think it is probably hypertension.".into()); 5];
    write_script(&path, "phys-mock", steps, BTreeMap::new());
    path
}
