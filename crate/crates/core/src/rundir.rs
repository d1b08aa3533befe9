//! Run directories.
//!
//! ```text
//! <run>/manifest.json            config snapshot, models, template hashes, times
//! <run>/sessions.jsonl           one scored session per line, append-only
//! <run>/transcripts/<id>.jsonl   one transcript entry per line
//! ```
//!
//! A session counts as completed once its line is in `sessions.jsonl`;
//! transcripts are written first, so a crash never leaves a scored session
//! without its transcript. Reruns skip completed record ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricsError, SampleResult, ScorePair, Scorer};
use crate::orchestrator::{DischargeText, Outcome, RunCase, SessionOutcome, TranscriptEntry};
use crate::record_pipeline::ClinicalRecord;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("io on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0} is not a run directory (no {MANIFEST_FILE})")]
    NotARunDir(PathBuf),
    #[error("run directory {path} was created for {existing}, not {requested}")]
    Mismatch { path: PathBuf, existing: String, requested: String },
    #[error("record id `{0}` cannot be used as a file name")]
    BadRecordId(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub case: RunCase,
    pub physician_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_model: Option<String>,
    /// Resolved run configuration, secrets excluded.
    pub config: serde_json::Value,
    pub template_hashes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_source: Option<String>,
    pub record_count: usize,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
}

impl RunManifest {
    fn identity(&self) -> String {
        format!("{} / {} / {}", self.case, self.physician_model, self.assistant_model.as_deref().unwrap_or("-"))
    }
}

/// One line of `sessions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    #[serde(flatten)]
    pub result: SampleResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    pub nudge_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discharge: Option<DischargeText>,
    pub gold_codes: Vec<String>,
    pub hallucinated_codes: Vec<String>,
}

impl SessionRecord {
    /// Scores a finished session. Failed sessions score zero everywhere.
    pub fn score(
        scorer: &Scorer<'_>,
        record: &ClinicalRecord,
        outcome: &SessionOutcome,
        physician_model: &str,
        assistant_model: Option<&str>,
    ) -> Result<Self, RunDirError> {
        let (scores, failure, failure_detail, hallucinated) = match &outcome.outcome {
            Outcome::Discharged { discharge } => (
                scorer.score_pair(&record.gold_codes, &discharge.codes)?,
                None,
                None,
                scorer.hallucinated(&discharge.codes).iter().map(|c| c.normalized().to_string()).collect(),
            ),
            Outcome::Failed { reason, error } => {
                (ScorePair::failed(), Some(reason.as_str().to_string()), Some(error.clone()), Vec::new())
            }
        };
        Ok(Self {
            result: SampleResult {
                record_id: record.record_id.clone(),
                case: outcome.case,
                physician_model: physician_model.to_string(),
                assistant_model: assistant_model.map(str::to_string),
                failure,
                turn_count: outcome.turn_count(),
                scores,
            },
            failure_detail,
            nudge_count: outcome.nudge_count(),
            discharge: outcome.discharge().cloned(),
            gold_codes: record.gold_codes.iter().map(|c| c.normalized().to_string()).collect(),
            hallucinated_codes: hallucinated,
        })
    }
}

/// Reads line-delimited JSON. A torn final line (crash mid-write) is
/// ignored; a bad line anywhere else is an error.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunDirError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(io(path))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if Some(i) == last && e.is_eof() => {
                tracing::warn!(path = %path.display(), line = i + 1, "ignoring truncated final line");
            }
            Err(e) => {
                return Err(RunDirError::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })
            }
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunDirError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn check_record_id(id: &str) -> Result<(), RunDirError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(RunDirError::BadRecordId(id.to_string()))
    }
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Opens an existing run directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RunDirError> {
        let path = path.as_ref().to_path_buf();
        let mpath = path.join(MANIFEST_FILE);
        if !mpath.is_file() {
            return Err(RunDirError::NotARunDir(path));
        }
        let text = fs::read_to_string(&mpath).map_err(io(&mpath))?;
        let manifest = serde_json::from_str(&text)
            .map_err(|e| RunDirError::Parse { path: mpath.clone(), line: e.line(), message: e.to_string() })?;
        Ok(Self { path, manifest })
    }

    /// Creates a run directory, or reopens it for resuming when it was
    /// created for the same case and models. On resume the stored start
    /// time is kept and everything else is refreshed.
    pub fn create_or_resume(path: impl AsRef<Path>, manifest: RunManifest) -> Result<Self, RunDirError> {
        let path = path.as_ref().to_path_buf();
        let mut manifest = manifest;
        if path.join(MANIFEST_FILE).is_file() {
            let existing = Self::open(&path)?;
            if existing.manifest.identity() != manifest.identity() {
                return Err(RunDirError::Mismatch {
                    path,
                    existing: existing.manifest.identity(),
                    requested: manifest.identity(),
                });
            }
            manifest.run_id = existing.manifest.run_id;
            manifest.started_at = existing.manifest.started_at;
        }
        let transcripts = path.join(TRANSCRIPTS_DIR);
        fs::create_dir_all(&transcripts).map_err(io(&transcripts))?;
        let mut dir = Self { path, manifest };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn write_manifest(&mut self) -> Result<(), RunDirError> {
        let bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.path.join(MANIFEST_FILE), &bytes)
    }

    pub fn sessions(&self) -> Result<Vec<SessionRecord>, RunDirError> {
        read_jsonl(&self.path.join(SESSIONS_FILE))
    }

    pub fn results(&self) -> Result<Vec<SampleResult>, RunDirError> {
        Ok(self.sessions()?.into_iter().map(|s| s.result).collect())
    }

    pub fn completed_ids(&self) -> Result<BTreeSet<String>, RunDirError> {
        Ok(self.sessions()?.into_iter().map(|s| s.result.record_id).collect())
    }

    pub fn transcript_path(&self, record_id: &str) -> Result<PathBuf, RunDirError> {
        check_record_id(record_id)?;
        Ok(self.path.join(TRANSCRIPTS_DIR).join(format!("{record_id}.jsonl")))
    }

    pub fn transcript(&self, record_id: &str) -> Result<Vec<TranscriptEntry>, RunDirError> {
        let path = self.transcript_path(record_id)?;
        if !path.is_file() {
            return Err(io(&path)(std::io::ErrorKind::NotFound.into()));
        }
        read_jsonl(&path)
    }

    /// Persists one finished session: transcript first, then the session
    /// line.
    pub fn append(&mut self, session: &SessionRecord, outcome: &SessionOutcome) -> Result<(), RunDirError> {
        let tpath = self.transcript_path(&session.result.record_id)?;
        let mut buf = Vec::new();
        for entry in &outcome.transcript {
            serde_json::to_writer(&mut buf, entry).expect("transcript serializes");
            buf.push(b'\n');
        }
        write_atomic(&tpath, &buf)?;

        let spath = self.path.join(SESSIONS_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&spath).map_err(io(&spath))?;
        let mut w = BufWriter::new(file);
        let mut line = serde_json::to_vec(session).expect("session serializes");
        line.push(b'\n');
        w.write_all(&line).map_err(io(&spath))?;
        w.flush().map_err(io(&spath))?;
        w.get_ref().sync_data().map_err(io(&spath))
    }

    pub fn mark_finished(&mut self, at: DateTime<Utc>) -> Result<(), RunDirError> {
        self.manifest.finished_at = Some(at);
        self.write_manifest()
    }
}
