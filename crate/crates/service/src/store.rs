//! Append-only session persistence.
//!
//! `index.jsonl` lists sessions in creation order; `<session_id>.jsonl`
//! holds that session's events. Replaying the events through the dialogue
//! state machine rebuilds the session exactly.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use medsyn_core::metrics::ScorePair;
use medsyn_core::orchestrator::RunCase;
use serde::{Deserialize, Serialize};

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session_id: String,
    pub record_id: String,
    pub case: RunCase,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Physician { content: String, wall_time_ms: u64 },
    Assistant { content: String, wall_time_ms: u64 },
    /// The assistant reply to the last physician turn failed.
    Unanswered { error: String },
    Discharge { diagnosis: String, codes: String, wall_time_ms: u64 },
    BackendFailed { error: String },
    /// Recorded for audit; replay recomputes the score.
    Scored { scores: ScorePair },
}

/// Session persistence; `None` directory keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct SessionStore {
    dir: Option<PathBuf>,
}

fn append_line(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(std::io::Error::other)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.flush()
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            // a torn trailing write is dropped; anything else is corruption
            Err(e) if e.is_eof() => tracing::warn!(path = %path.display(), line = i + 1, "ignoring truncated line"),
            Err(e) => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                ))
            }
        }
    }
    Ok(out)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self { dir: None }
    }

    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir: Some(dir) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn session_path(&self, session_id: &str) -> std::io::Result<Option<PathBuf>> {
        if !valid_id(session_id) {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "bad session id"));
        }
        Ok(self.dir.as_ref().map(|d| d.join(format!("{session_id}.jsonl"))))
    }

    pub fn register(&self, entry: &IndexEntry) -> std::io::Result<()> {
        if let Some(path) = self.session_path(&entry.session_id)? {
            File::create(&path)?;
            append_line(&self.dir.as_ref().expect("dir").join(INDEX_FILE), entry)?;
        }
        Ok(())
    }

    pub fn append(&self, session_id: &str, event: &SessionEvent) -> std::io::Result<()> {
        match self.session_path(session_id)? {
            Some(path) => append_line(&path, event),
            None => Ok(()),
        }
    }

    /// Every indexed session with its events, in creation order.
    pub fn load(&self) -> std::io::Result<Vec<(IndexEntry, Vec<SessionEvent>)>> {
        let Some(dir) = &self.dir else { return Ok(Vec::new()) };
        let index = dir.join(INDEX_FILE);
        if !index.exists() {
            return Ok(Vec::new());
        }
        let entries: Vec<IndexEntry> = read_lines(&index)?;
        entries
            .into_iter()
            .map(|e| {
                let path = self.session_path(&e.session_id)?.expect("dir");
                let events = if path.exists() { read_lines(&path)? } else { Vec::new() };
                Ok((e, events))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        let e = IndexEntry {
            session_id: "abc-1".into(),
            record_id: "r".into(),
            case: RunCase::HumanInLoop,
            created_at: Utc::now(),
        };
        store.register(&e).unwrap();
        let ev = SessionEvent::Physician { content: "hi".into(), wall_time_ms: 5 };
        store.append("abc-1", &ev).unwrap();
        assert_eq!(store.load().unwrap(), vec![(e, vec![ev])]);
        assert!(store.append("../x", &SessionEvent::BackendFailed { error: String::new() }).is_err());
        assert!(SessionStore::in_memory().load().unwrap().is_empty());
    }
}
