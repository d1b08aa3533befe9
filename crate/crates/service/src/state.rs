use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use medsyn_core::icd10::CodeTable;
use medsyn_core::llm_client::{BackendFactory, ChatBackend, ChatMessage, LlmError};
use medsyn_core::metrics::{ScorePair, Scorer};
use medsyn_core::orchestrator::{
    Dialogue, DialogueConfig, DialogueTurn, DischargeText, Next, Outcome, RunCase, Templates, TranscriptEntry,
};
use medsyn_core::record_pipeline::ClinicalRecord;
use serde::Serialize;
use tokio::sync::{Mutex, RwLock};

use crate::error::ServiceError;
use crate::store::{IndexEntry, SessionEvent, SessionStore};

#[derive(Debug, Clone, Default)]
pub struct ServiceSettings {
    pub dialogue: DialogueConfig,
    /// Parent directory of batch run directories served under `/reports`.
    pub runs_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    AwaitingAssistant,
    Discharged,
    Failed,
}

pub struct Session {
    pub id: String,
    pub record_id: String,
    pub case: RunCase,
    pub created_at: DateTime<Utc>,
    dialogue: Dialogue,
    score: Option<ScorePair>,
    hallucinated: Vec<String>,
    last_activity: Instant,
    assistant: Arc<dyn ChatBackend>,
    physician: Option<Arc<dyn ChatBackend>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub reason: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Gold {
    pub diagnosis_text: String,
    pub codes: Vec<String>,
}

/// What clients see of a session. Gold content is present only once the
/// session is discharged.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub record_id: String,
    pub case: RunCase,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    pub chief_complaint: String,
    pub turn_count: usize,
    pub nudge_count: usize,
    pub transcript: Vec<TranscriptEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discharge: Option<DischargeText>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScorePair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hallucinated_codes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
}

impl Session {
    pub fn status(&self) -> SessionStatus {
        match (self.dialogue.next(), self.dialogue.outcome()) {
            (Next::Physician, _) => SessionStatus::Open,
            (Next::Assistant, _) => SessionStatus::AwaitingAssistant,
            (Next::Done, Some(Outcome::Discharged { .. })) => SessionStatus::Discharged,
            (Next::Done, _) => SessionStatus::Failed,
        }
    }

    pub fn score(&self) -> Option<&ScorePair> {
        self.score.as_ref()
    }

    pub fn dialogue(&self) -> &Dialogue {
        &self.dialogue
    }

    fn elapsed(&mut self) -> Duration {
        let now = Instant::now();
        let d = now - self.last_activity;
        self.last_activity = now;
        d
    }

    fn last_turn(&self) -> Option<DialogueTurn> {
        self.dialogue.transcript().iter().rev().find_map(TranscriptEntry::as_turn).cloned()
    }
}

fn ms(d: Duration) -> u64 {
    d.as_millis().try_into().unwrap_or(u64::MAX)
}

/// Applies a persisted event to a dialogue.
fn apply(dialogue: &mut Dialogue, event: &SessionEvent) -> Result<(), ServiceError> {
    let ms = |v: u64| Duration::from_millis(v);
    match event {
        SessionEvent::Physician { content, wall_time_ms } => dialogue.accept_physician(content, ms(*wall_time_ms))?,
        SessionEvent::Assistant { content, wall_time_ms } => dialogue.accept_assistant(content, ms(*wall_time_ms))?,
        SessionEvent::Unanswered { .. } => dialogue.mark_unanswered()?,
        SessionEvent::Discharge { diagnosis, codes, wall_time_ms } => {
            dialogue.submit_discharge(DischargeText::new(diagnosis, codes)?, ms(*wall_time_ms))?
        }
        SessionEvent::BackendFailed { error } => dialogue.backend_failed(error.clone())?,
        SessionEvent::Scored { .. } => {}
    }
    Ok(())
}

/// Prepared assistant call for a human message.
pub struct PendingReply {
    pub physician_turn: Option<DialogueTurn>,
    pub call: Option<(Arc<dyn ChatBackend>, Vec<ChatMessage>)>,
    started: Instant,
}

pub struct AppState {
    records: BTreeMap<String, ClinicalRecord>,
    record_order: Vec<String>,
    code_table: Option<CodeTable>,
    templates: Templates,
    assistant: BackendFactory,
    physician: Option<BackendFactory>,
    settings: ServiceSettings,
    store: SessionStore,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordSummary {
    pub record_id: String,
    pub chief_complaint: String,
}

impl AppState {
    pub fn new(
        records: Vec<ClinicalRecord>,
        code_table: Option<CodeTable>,
        templates: Templates,
        assistant: BackendFactory,
        physician: Option<BackendFactory>,
        settings: ServiceSettings,
        store: SessionStore,
    ) -> Result<Self, ServiceError> {
        if records.is_empty() {
            return Err(ServiceError::BadRequest("record store is empty".into()));
        }
        templates.validate()?;
        let record_order = records.iter().map(|r| r.record_id.clone()).collect();
        Ok(Self {
            records: records.into_iter().map(|r| (r.record_id.clone(), r)).collect(),
            record_order,
            code_table,
            templates,
            assistant,
            physician,
            settings,
            store,
            sessions: RwLock::default(),
        })
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    fn scorer(&self) -> Scorer<'_> {
        match &self.code_table {
            Some(t) => Scorer::default().with_codes(t),
            None => Scorer::default(),
        }
    }

    pub fn list_records(&self) -> Vec<RecordSummary> {
        self.record_order
            .iter()
            .map(|id| RecordSummary { record_id: id.clone(), chief_complaint: self.records[id].chief_complaint.clone() })
            .collect()
    }

    fn record(&self, id: &str) -> Result<&ClinicalRecord, ServiceError> {
        self.records.get(id).ok_or_else(|| ServiceError::UnknownRecord(id.to_string()))
    }

    fn new_session(&self, entry: &IndexEntry) -> Result<Session, ServiceError> {
        let record = self.record(&entry.record_id)?;
        let physician = match entry.case {
            RunCase::HumanInLoop => None,
            RunCase::TwoAgent => Some(
                self.physician
                    .as_ref()
                    .ok_or_else(|| ServiceError::InvalidCase("two_agent (no physician backend configured)".into()))?
                    .for_record(&record.record_id),
            ),
            other => return Err(ServiceError::InvalidCase(other.to_string())),
        };
        Ok(Session {
            id: entry.session_id.clone(),
            record_id: entry.record_id.clone(),
            case: entry.case,
            created_at: entry.created_at,
            dialogue: Dialogue::new(entry.case, record, &self.templates, self.settings.dialogue)?,
            score: None,
            hallucinated: Vec::new(),
            last_activity: Instant::now(),
            assistant: self.assistant.for_record(&record.record_id),
            physician,
        })
    }

    pub fn view(&self, s: &Session) -> SessionView {
        let record = &self.records[&s.record_id];
        let status = s.status();
        let failure = match s.dialogue.outcome() {
            Some(Outcome::Failed { reason, error }) => {
                Some(Failure { reason: reason.as_str().to_string(), error: error.clone() })
            }
            _ => None,
        };
        let discharged = status == SessionStatus::Discharged;
        SessionView {
            session_id: s.id.clone(),
            record_id: s.record_id.clone(),
            case: s.case,
            status,
            created_at: s.created_at,
            chief_complaint: record.chief_complaint.clone(),
            turn_count: s.dialogue.turn_count(),
            nudge_count: s.dialogue.nudge_count(),
            transcript: s.dialogue.transcript().to_vec(),
            discharge: s.dialogue.discharge().cloned(),
            score: s.score.clone(),
            hallucinated_codes: discharged.then(|| s.hallucinated.clone()),
            failure,
            gold: discharged.then(|| Gold {
                diagnosis_text: record.gold_diagnosis_text.clone(),
                codes: record.gold_codes.iter().map(|c| c.display()).collect(),
            }),
        }
    }

    pub async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ServiceError::NotFound(format!("session `{id}`")))
    }

    pub async fn session_ids(&self) -> Vec<String> {
        self.sessions.read().await.keys().cloned().collect()
    }

    fn persist(&self, id: &str, event: &SessionEvent) {
        if let Err(e) = self.store.append(id, event) {
            tracing::error!(session = id, error = %e, "failed to persist session event");
        }
    }

    /// Scores a session that just reached `Discharged`.
    fn finalize(&self, s: &mut Session) {
        if s.score.is_some() {
            return;
        }
        let Some(Outcome::Discharged { discharge }) = s.dialogue.outcome() else { return };
        let record = &self.records[&s.record_id];
        let scorer = self.scorer();
        match scorer.score_pair(&record.gold_codes, &discharge.codes) {
            Ok(scores) => {
                s.hallucinated = scorer.hallucinated(&discharge.codes).iter().map(|c| c.display()).collect();
                self.persist(&s.id, &SessionEvent::Scored { scores: scores.clone() });
                s.score = Some(scores);
            }
            Err(e) => tracing::error!(session = %s.id, error = %e, "scoring failed"),
        }
    }

    pub async fn create_session(self: &Arc<Self>, record_id: &str, case: RunCase) -> Result<SessionView, ServiceError> {
        let entry = IndexEntry {
            session_id: uuid::Uuid::new_v4().to_string(),
            record_id: record_id.to_string(),
            case,
            created_at: Utc::now(),
        };
        let session = self.new_session(&entry)?;
        self.store.register(&entry)?;
        let view = self.view(&session);
        self.sessions.write().await.insert(entry.session_id.clone(), Arc::new(Mutex::new(session)));
        if case == RunCase::TwoAgent {
            self.clone().spawn_driver(entry.session_id);
        }
        Ok(view)
    }

    /// Rebuilds sessions from the store. Simulated sessions interrupted by
    /// a restart are closed as backend failures; a human turn left without
    /// a reply is marked unanswered.
    pub async fn restore(&self) -> Result<usize, ServiceError> {
        let loaded = self.store.load()?;
        let mut sessions = self.sessions.write().await;
        let n = loaded.len();
        for (entry, events) in loaded {
            let mut s = self.new_session(&entry)?;
            for ev in &events {
                apply(&mut s.dialogue, ev).map_err(|e| {
                    ServiceError::Internal(format!("replaying session {}: {e}", entry.session_id))
                })?;
            }
            if s.dialogue.next() != Next::Done {
                let event = match s.case {
                    RunCase::TwoAgent => Some(SessionEvent::BackendFailed { error: "interrupted by service restart".into() }),
                    _ if s.dialogue.next() == Next::Assistant => {
                        Some(SessionEvent::Unanswered { error: "interrupted by service restart".into() })
                    }
                    _ => None,
                };
                if let Some(ev) = event {
                    apply(&mut s.dialogue, &ev)?;
                    self.persist(&s.id, &ev);
                }
            }
            let recorded = events.iter().rev().find_map(|e| match e {
                SessionEvent::Scored { scores } => Some(scores.clone()),
                _ => None,
            });
            self.finalize(&mut s);
            if let (Some(old), Some(new)) = (&recorded, &s.score) {
                if old != new {
                    tracing::warn!(session = %s.id, "replayed score differs from the recorded one");
                }
            }
            sessions.insert(entry.session_id.clone(), Arc::new(Mutex::new(s)));
        }
        Ok(n)
    }

    /// Records a human physician message and prepares the assistant call.
    pub async fn begin_message(&self, id: &str, content: &str) -> Result<PendingReply, ServiceError> {
        let session = self.session(id).await?;
        let mut s = session.lock().await;
        if s.case != RunCase::HumanInLoop {
            return Err(ServiceError::InvalidCase(format!("{} sessions are driven by the server", s.case)));
        }
        match s.status() {
            SessionStatus::Open => {}
            SessionStatus::AwaitingAssistant => return Err(ServiceError::Busy),
            _ => return Err(ServiceError::SessionNotOpen(s.dialogue.state_name())),
        }
        if content.trim().is_empty() {
            return Err(ServiceError::EmptyField("message"));
        }
        let elapsed = s.elapsed();
        s.dialogue.accept_physician(content, elapsed)?;
        self.persist(id, &SessionEvent::Physician { content: content.trim().to_string(), wall_time_ms: ms(elapsed) });
        let physician_turn = s.last_turn();
        let call = (s.dialogue.next() == Next::Assistant).then(|| (s.assistant.clone(), s.dialogue.assistant_messages()));
        Ok(PendingReply { physician_turn, call, started: Instant::now() })
    }

    /// Applies the assistant's reply (or its failure) to a human session.
    pub async fn finish_message(
        &self,
        id: &str,
        pending: &PendingReply,
        reply: Result<ChatMessage, LlmError>,
    ) -> Result<DialogueTurn, ServiceError> {
        let session = self.session(id).await?;
        let mut s = session.lock().await;
        let elapsed = pending.started.elapsed();
        match reply {
            Ok(m) if !m.content.trim().is_empty() => {
                s.dialogue.accept_assistant(&m.content, elapsed)?;
                s.last_activity = Instant::now();
                self.persist(id, &SessionEvent::Assistant { content: m.content.trim().to_string(), wall_time_ms: ms(elapsed) });
                self.finalize(&mut s);
                Ok(s.last_turn().expect("assistant turn just added"))
            }
            other => {
                let error = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => LlmError::EmptyReply.to_string(),
                };
                s.dialogue.mark_unanswered()?;
                self.persist(id, &SessionEvent::Unanswered { error: error.clone() });
                Err(ServiceError::Backend(error))
            }
        }
    }

    /// Accepts the human physician's discharge, lets the assistant close,
    /// and scores the session.
    pub async fn submit_discharge(&self, id: &str, diagnosis: &str, codes: &str) -> Result<SessionView, ServiceError> {
        let session = self.session(id).await?;
        let call = {
            let mut s = session.lock().await;
            if s.case != RunCase::HumanInLoop {
                return Err(ServiceError::InvalidCase(format!("{} sessions are driven by the server", s.case)));
            }
            match s.status() {
                SessionStatus::Open => {}
                SessionStatus::AwaitingAssistant => return Err(ServiceError::Busy),
                _ => return Err(ServiceError::SessionNotOpen(s.dialogue.state_name())),
            }
            let discharge = DischargeText::new(diagnosis, codes)?;
            let elapsed = s.elapsed();
            s.dialogue.submit_discharge(discharge.clone(), elapsed)?;
            self.persist(
                id,
                &SessionEvent::Discharge {
                    diagnosis: discharge.diagnosis.clone(),
                    codes: discharge.codes_raw.clone(),
                    wall_time_ms: ms(elapsed),
                },
            );
            (s.dialogue.next() == Next::Assistant).then(|| (s.assistant.clone(), s.dialogue.assistant_messages()))
        };
        if let Some((backend, messages)) = call {
            let started = Instant::now();
            let reply = backend.chat(&messages).await;
            let mut s = session.lock().await;
            let event = match reply {
                Ok(m) if !m.content.trim().is_empty() => {
                    s.dialogue.accept_assistant(&m.content, started.elapsed())?;
                    SessionEvent::Assistant { content: m.content.trim().to_string(), wall_time_ms: ms(started.elapsed()) }
                }
                Ok(_) => SessionEvent::BackendFailed { error: LlmError::EmptyReply.to_string() },
                Err(e) => SessionEvent::BackendFailed { error: e.to_string() },
            };
            if let SessionEvent::BackendFailed { error } = &event {
                tracing::warn!(session = id, %error, "closing reply failed; discharging without it");
                s.dialogue.backend_failed(error.clone())?;
            }
            self.persist(id, &event);
        }
        let mut s = session.lock().await;
        self.finalize(&mut s);
        Ok(self.view(&s))
    }

    /// Drives a simulated two-agent session to completion in the
    /// background. The lock is released while a backend call is pending
    /// so the session stays observable.
    fn spawn_driver(self: Arc<Self>, id: String) {
        tokio::spawn(async move {
            loop {
                let Ok(session) = self.session(&id).await else { return };
                let (backend, messages, physician_side) = {
                    let s = session.lock().await;
                    match s.dialogue.next() {
                        Next::Done => return,
                        Next::Physician => (s.physician.clone().expect("two-agent physician"), s.dialogue.physician_messages(), true),
                        Next::Assistant => (s.assistant.clone(), s.dialogue.assistant_messages(), false),
                    }
                };
                let started = Instant::now();
                let reply = backend.chat(&messages).await;
                let mut s = session.lock().await;
                let elapsed = started.elapsed();
                let event = match reply {
                    Ok(m) if !m.content.trim().is_empty() => {
                        let content = m.content.trim().to_string();
                        if physician_side {
                            SessionEvent::Physician { content, wall_time_ms: ms(elapsed) }
                        } else {
                            SessionEvent::Assistant { content, wall_time_ms: ms(elapsed) }
                        }
                    }
                    Ok(_) => SessionEvent::BackendFailed { error: LlmError::EmptyReply.to_string() },
                    Err(e) => SessionEvent::BackendFailed { error: e.to_string() },
                };
                if let Err(e) = apply(&mut s.dialogue, &event) {
                    tracing::error!(session = %id, error = %e, "driver step rejected");
                    return;
                }
                self.persist(&id, &event);
                self.finalize(&mut s);
            }
        });
    }
}

impl PendingReply {
    pub fn started(&self) -> Instant {
        self.started
    }
}
