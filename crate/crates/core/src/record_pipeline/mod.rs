//! Discharge-note ingestion: section parsing, inclusion filters,
//! deterministic test-set sampling, corpus statistics and a synthetic
//! record generator for license-free testing.

mod filter;
mod ingest;
mod sampling;
mod sections;
mod stats;
mod synthetic;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icd10::Icd10Code;

pub use filter::{filter_record, DropReason, FilterDecision};
pub use ingest::{
    build_records, read_diagnoses, read_notes, write_rows, DiagnosisRow, IngestReport, NoteRow, RowFormat,
};
pub use sampling::{sample_test_set, SplitMix64};
pub use sections::{normalize_whitespace, parse_sections, NoteSections, Section, SectionName};
pub use stats::{corpus_stats, CorpusStats};
pub use synthetic::{generate_raw_corpus, generate_synthetic, RawCorpusSpec, SynthConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty note text")]
    EmptyInput,
    #[error("duplicate heading `{0}`")]
    DuplicateHeading(SectionName),
    #[error("requested {requested} records but only {available} available")]
    NotEnoughRecords { requested: usize, available: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("record {record_id} rejected: {reason}")]
    InvalidRecord { record_id: String, reason: DropReason },
    #[error("{path}:{row}: {message}")]
    Format { path: String, row: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One patient admission that passed every inclusion filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub record_id: String,
    pub sections: NoteSections,
    pub chief_complaint: String,
    pub gold_diagnosis_text: String,
    pub gold_codes: Vec<Icd10Code>,
    pub patient_status: String,
}

impl ClinicalRecord {
    /// Builds a record, enforcing the inclusion filters.
    pub fn new(
        record_id: impl Into<String>,
        sections: NoteSections,
        gold_codes: Vec<Icd10Code>,
    ) -> Result<Self, DropReason> {
        let status = sections.get(SectionName::DischargeCondition).unwrap_or_default().to_string();
        if let FilterDecision::Drop(reason) = filter_record(&sections, &status) {
            return Err(reason);
        }
        if gold_codes.is_empty() {
            return Err(DropReason::NoCodes);
        }
        let body = |n| sections.get(n).unwrap_or_default().to_string();
        Ok(Self {
            record_id: record_id.into(),
            chief_complaint: body(SectionName::ChiefComplaint),
            gold_diagnosis_text: body(SectionName::DischargeDiagnosis),
            patient_status: status,
            sections,
            gold_codes,
        })
    }

    /// Re-checks the invariants of a deserialized record.
    pub fn validate(&self) -> Result<(), DropReason> {
        Self::new(self.record_id.clone(), self.sections.clone(), self.gold_codes.clone()).map(|_| ())
    }

    /// The note with every discharge-* section removed (including
    /// unrecognized headings that mention discharge).
    pub fn redacted_note(&self) -> String {
        self.sections.render_filtered(|s| match s.name {
            SectionName::Other => !s.heading.to_ascii_lowercase().contains("discharge"),
            name => !SectionName::DISCHARGE.contains(&name),
        })
    }
}

/// Writes records as line-delimited JSON, one record per line.
pub fn write_store(path: impl AsRef<Path>, records: &[ClinicalRecord]) -> Result<(), PipelineError> {
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a canonical record store, validating each record.
pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<ClinicalRecord>, PipelineError> {
    let path_str = path.as_ref().display().to_string();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ClinicalRecord = serde_json::from_str(&line).map_err(|e| PipelineError::Format {
            path: path_str.clone(),
            row: i + 1,
            message: e.to_string(),
        })?;
        record.validate().map_err(|reason| PipelineError::InvalidRecord {
            record_id: record.record_id.clone(),
            reason,
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::CodeTable;

    #[test]
    fn store_round_trip() {
        let records = generate_synthetic(3, 5, &CodeTable::bundled_sample(), &SynthConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        write_store(&path, &records).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn redaction_drops_discharge_sections() {
        let records = generate_synthetic(5, 3, &CodeTable::bundled_sample(), &SynthConfig::default());
        for r in &records {
            let note = r.redacted_note();
            assert!(!note.contains(&r.gold_diagnosis_text));
            assert!(!note.contains("Discharge Diagnosis"));
            assert!(!note.contains("Discharge Disposition"));
            assert!(note.contains(r.sections.get(SectionName::HistoryOfPresentIllness).unwrap()));
            assert!(note.contains(&r.chief_complaint));
        }
    }
}
