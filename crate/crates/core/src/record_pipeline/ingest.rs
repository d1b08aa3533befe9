//! Notes + diagnoses ingestion.
//!
//! Both inputs are row-oriented and may be comma-separated (with a header
//! row) or line-delimited JSON. Column names follow the canonical names
//! with MIMIC-IV aliases, so `discharge.csv` and `diagnoses_icd.csv` can be
//! fed in directly:
//!
//! | field       | aliases          |
//! |-------------|------------------|
//! | record_id   | hadm_id          |
//! | note_text   | text             |
//! | icd_code    | code             |
//! | icd_version | version          |

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{parse_sections, ClinicalRecord, DropReason, PipelineError};
use crate::icd10::{normalize, Icd10Code};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRow {
    pub record_id: String,
    pub note_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRow {
    pub record_id: String,
    pub icd_code: String,
    pub icd_version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFormat {
    Csv,
    Jsonl,
}

impl RowFormat {
    /// `.jsonl`/`.ndjson`/`.json` are JSON lines, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("jsonl" | "ndjson" | "json") => RowFormat::Jsonl,
            _ => RowFormat::Csv,
        }
    }
}

const RECORD_ID: &[&str] = &["record_id", "hadm_id"];
const NOTE_TEXT: &[&str] = &["note_text", "text"];
const ICD_CODE: &[&str] = &["icd_code", "code"];
const ICD_VERSION: &[&str] = &["icd_version", "version"];

/// Raw rows as field-name → string maps, with 1-based data row numbers.
fn read_rows(path: &Path) -> Result<Vec<(usize, HashMap<String, String>)>, PipelineError> {
    let mut rows = Vec::new();
    match RowFormat::from_path(path) {
        RowFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
            let headers: Vec<String> =
                rdr.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let map = headers.iter().cloned().zip(rec.iter().map(str::to_string)).collect();
                rows.push((i + 1, map));
            }
        }
        RowFormat::Jsonl => {
            let reader = BufReader::new(std::fs::File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: Value = serde_json::from_str(&line).map_err(|e| PipelineError::Format {
                    path: path.display().to_string(),
                    row: i + 1,
                    message: e.to_string(),
                })?;
                let Value::Object(obj) = value else {
                    return Err(PipelineError::Format {
                        path: path.display().to_string(),
                        row: i + 1,
                        message: "expected a JSON object".into(),
                    });
                };
                let map = obj
                    .into_iter()
                    .map(|(k, v)| {
                        let s = match v {
                            Value::String(s) => s,
                            Value::Null => String::new(),
                            other => other.to_string(),
                        };
                        (k.to_ascii_lowercase(), s)
                    })
                    .collect();
                rows.push((i + 1, map));
            }
        }
    }
    Ok(rows)
}

fn field<'a>(
    path: &Path,
    row: usize,
    map: &'a HashMap<String, String>,
    names: &[&str],
) -> Result<&'a str, PipelineError> {
    names
        .iter()
        .find_map(|n| map.get(*n))
        .map(String::as_str)
        .ok_or_else(|| PipelineError::Format {
            path: path.display().to_string(),
            row,
            message: format!("missing column `{}`", names[0]),
        })
}

/// Writes rows as CSV with a header, or as JSON lines, by extension.
pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), PipelineError> {
    let path = path.as_ref();
    match RowFormat::from_path(path) {
        RowFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        RowFormat::Jsonl => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            for r in rows {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_notes(path: impl AsRef<Path>) -> Result<Vec<NoteRow>, PipelineError> {
    let path = path.as_ref();
    read_rows(path)?
        .into_iter()
        .map(|(row, map)| {
            Ok(NoteRow {
                record_id: field(path, row, &map, RECORD_ID)?.trim().to_string(),
                note_text: field(path, row, &map, NOTE_TEXT)?.to_string(),
            })
        })
        .collect()
}

pub fn read_diagnoses(path: impl AsRef<Path>) -> Result<Vec<DiagnosisRow>, PipelineError> {
    let path = path.as_ref();
    read_rows(path)?
        .into_iter()
        .map(|(row, map)| {
            let version = field(path, row, &map, ICD_VERSION)?.trim();
            let icd_version = version.parse().map_err(|_| PipelineError::Format {
                path: path.display().to_string(),
                row,
                message: format!("icd_version `{version}` is not an integer"),
            })?;
            Ok(DiagnosisRow {
                record_id: field(path, row, &map, RECORD_ID)?.trim().to_string(),
                icd_code: field(path, row, &map, ICD_CODE)?.trim().to_string(),
                icd_version,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<ClinicalRecord>,
    pub dropped: Vec<(String, DropReason)>,
    /// Diagnosis rows skipped because they are not ICD-10.
    pub non_icd10_rows: usize,
    /// ICD-10 rows whose code failed the syntactic check.
    pub invalid_code_rows: usize,
}

impl IngestReport {
    /// Drop counts per reason kind, sorted by kind.
    pub fn drop_counts(&self) -> Vec<(&'static str, usize)> {
        let mut counts: HashMap<&'static str, usize> = HashMap::new();
        for (_, r) in &self.dropped {
            *counts.entry(r.kind()).or_default() += 1;
        }
        let mut v: Vec<_> = counts.into_iter().collect();
        v.sort();
        v
    }
}

/// Joins notes with their ICD-10 diagnoses and applies the inclusion
/// filters. Records come out in notes-file order.
pub fn build_records(notes: &[NoteRow], diagnoses: &[DiagnosisRow]) -> IngestReport {
    let mut report = IngestReport::default();
    let mut codes: HashMap<&str, Vec<Icd10Code>> = HashMap::new();
    for d in diagnoses {
        if d.icd_version != 10 {
            report.non_icd10_rows += 1;
            continue;
        }
        match normalize(&d.icd_code) {
            Ok(code) if code.is_syntactically_valid() => {
                let list = codes.entry(d.record_id.as_str()).or_default();
                if !list.contains(&code) {
                    list.push(code);
                }
            }
            _ => report.invalid_code_rows += 1,
        }
    }

    let mut seen = HashSet::new();
    for note in notes {
        if !seen.insert(note.record_id.as_str()) {
            report
                .dropped
                .push((note.record_id.clone(), DropReason::Malformed("duplicate record id".into())));
            continue;
        }
        let sections = match parse_sections(&note.note_text) {
            Ok(s) => s,
            Err(e) => {
                report.dropped.push((note.record_id.clone(), DropReason::Malformed(e.to_string())));
                continue;
            }
        };
        let gold = codes.remove(note.record_id.as_str()).unwrap_or_default();
        match ClinicalRecord::new(note.record_id.clone(), sections, gold) {
            Ok(r) => report.records.push(r),
            Err(reason) => report.dropped.push((note.record_id.clone(), reason)),
        }
    }
    report
}
