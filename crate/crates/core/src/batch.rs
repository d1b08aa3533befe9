//! Batch execution of one run case over a record set.

use futures::stream::{self, StreamExt};
use serde::Serialize;
use thiserror::Error;

use crate::llm_client::BackendFactory;
use crate::metrics::Scorer;
use crate::orchestrator::{run_dialogue, Clock, DialogueConfig, OrchestratorError, RunCase, Templates};
use crate::record_pipeline::ClinicalRecord;
use crate::rundir::{RunDir, RunDirError, SessionRecord};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchConfig {
    pub case: RunCase,
    pub dialogue: DialogueConfig,
    pub concurrency: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    /// Already completed in an earlier run.
    pub skipped: usize,
    pub discharged: usize,
    pub failed: usize,
    /// Records that could not be run at all (e.g. a prompt leak).
    pub errors: Vec<(String, String)>,
}

impl BatchSummary {
    /// Failed or unrunnable sessions over all sessions attempted in this
    /// invocation.
    pub fn failure_rate(&self) -> f64 {
        let attempted = self.discharged + self.failed + self.errors.len();
        if attempted == 0 {
            0.0
        } else {
            (self.failed + self.errors.len()) as f64 / attempted as f64
        }
    }
}

pub fn validate(case: RunCase, assistant: Option<&BackendFactory>, concurrency: usize) -> Result<(), BatchError> {
    match (case, assistant.is_some()) {
        (RunCase::HumanInLoop, _) => Err(BatchError::Config("human_in_loop runs through the session service".into())),
        (RunCase::TwoAgent, false) => Err(BatchError::Config("two_agent requires an assistant backend".into())),
        (c, true) if c.is_baseline() => Err(BatchError::Config(format!("{c} must not configure an assistant backend"))),
        _ if concurrency == 0 => Err(BatchError::Config("concurrency must be at least 1".into())),
        _ => Ok(()),
    }
}

/// Runs every record not yet completed in `dir`, at most
/// `config.concurrency` sessions at a time. Results are written by this
/// task only, in completion order.
#[allow(clippy::too_many_arguments)]
pub async fn run_batch(
    records: &[ClinicalRecord],
    physician: &BackendFactory,
    assistant: Option<&BackendFactory>,
    templates: &Templates,
    scorer: &Scorer<'_>,
    config: &BatchConfig,
    dir: &mut RunDir,
    clock: &dyn Clock,
) -> Result<BatchSummary, BatchError> {
    validate(config.case, assistant, config.concurrency)?;
    let done = dir.completed_ids()?;
    let mut summary = BatchSummary { total: records.len(), ..Default::default() };
    let pending: Vec<&ClinicalRecord> = records.iter().filter(|r| !done.contains(&r.record_id)).collect();
    summary.skipped = records.len() - pending.len();

    let physician_model = physician.model_id().to_string();
    let assistant_model = assistant.map(|a| a.model_id().to_string());
    let mut results = stream::iter(pending)
        .map(|record| async move {
            let phys = physician.for_record(&record.record_id);
            let asst = assistant.map(|a| a.for_record(&record.record_id));
            let out = run_dialogue(
                config.case,
                record,
                phys.as_ref(),
                asst.as_deref(),
                &config.dialogue,
                templates,
                clock,
            )
            .await;
            (record, out)
        })
        .buffer_unordered(config.concurrency);

    while let Some((record, out)) = results.next().await {
        let outcome = match out {
            Ok(o) => o,
            Err(e @ OrchestratorError::InvalidConfig(_)) => return Err(BatchError::Config(e.to_string())),
            Err(e) => {
                tracing::error!(record = %record.record_id, error = %e, "session could not run");
                summary.errors.push((record.record_id.clone(), e.to_string()));
                continue;
            }
        };
        let session = SessionRecord::score(scorer, record, &outcome, &physician_model, assistant_model.as_deref())?;
        if session.result.failed() {
            summary.failed += 1;
        } else {
            summary.discharged += 1;
        }
        tracing::info!(
            record = %record.record_id,
            turns = session.result.turn_count,
            failure = session.result.failure.as_deref().unwrap_or("-"),
            "session finished"
        );
        dir.append(&session, &outcome)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::icd10::CodeTable;
    use crate::llm_client::{ScriptFile, ScriptStep};
    use crate::orchestrator::FrozenClock;
    use crate::record_pipeline::{generate_synthetic, SynthConfig};
    use crate::rundir::RunManifest;

    fn factory(model: &str, steps: &[&str]) -> BackendFactory {
        BackendFactory::Scripted(Arc::new(ScriptFile {
            model_id: model.into(),
            default: steps.iter().map(|s| ScriptStep::Reply(s.to_string())).collect(),
            records: BTreeMap::new(),
        }))
    }

    fn manifest() -> RunManifest {
        RunManifest {
            run_id: "t".into(),
            tool_version: "t".into(),
            case: RunCase::TwoAgent,
            physician_model: "p".into(),
            assistant_model: Some("a".into()),
            config: serde_json::Value::Null,
            template_hashes: BTreeMap::new(),
            record_source: None,
            record_count: 6,
            started_at: chrono::Utc::now(),
            finished_at: None,
        }
    }

    #[tokio::test]
    async fn runs_then_resumes() {
        let table = CodeTable::bundled_sample();
        let recs = generate_synthetic(2, 6, &table, &SynthConfig::default());
        let phys = factory("p", &["Q", r#"{"tool": "discharge_text_tool", "diagnosis": "d", "codes": "I10"}"#]);
        let asst = factory("a", &["A", "bye"]);
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = RunDir::create_or_resume(tmp.path(), manifest()).unwrap();
        let cfg = BatchConfig { case: RunCase::TwoAgent, dialogue: DialogueConfig::default(), concurrency: 3 };
        let scorer = Scorer::default().with_codes(&table);
        let t = Templates::builtin();
        let s = run_batch(&recs, &phys, Some(&asst), &t, &scorer, &cfg, &mut dir, &FrozenClock).await.unwrap();
        assert_eq!((s.discharged, s.failed, s.skipped), (6, 0, 0));
        assert!(dir.sessions().unwrap().iter().all(|x| x.result.turn_count == 4));

        let s = run_batch(&recs, &phys, Some(&asst), &t, &scorer, &cfg, &mut dir, &FrozenClock).await.unwrap();
        assert_eq!((s.discharged, s.skipped), (0, 6));
        assert_eq!(dir.sessions().unwrap().len(), 6);
    }

    #[test]
    fn config_validation() {
        let f = factory("x", &[]);
        assert!(validate(RunCase::BaselineComplaint, Some(&f), 1).is_err());
        assert!(validate(RunCase::TwoAgent, None, 1).is_err());
        assert!(validate(RunCase::TwoAgent, Some(&f), 0).is_err());
        assert!(validate(RunCase::HumanInLoop, Some(&f), 1).is_err());
        assert!(validate(RunCase::BaselineFullNote, None, 4).is_ok());
    }
}
