use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use serde::Serialize;

use super::{ClinicalRecord, PipelineError};
use crate::icd10::Icd10Code;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub record_count: usize,
    pub unique_diagnosis_count: usize,
    pub total_code_count: usize,
    #[serde(serialize_with = "ratio_as_f64")]
    pub mean_codes_per_sample: Ratio<u64>,
    pub most_common_code: Icd10Code,
    pub most_common_count: usize,
    pub rarest_codes: BTreeSet<Icd10Code>,
    pub rarest_count: usize,
}

fn ratio_as_f64<S: serde::Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(*r.numer() as f64 / *r.denom() as f64)
}

impl CorpusStats {
    pub fn mean_as_f64(&self) -> f64 {
        *self.mean_codes_per_sample.numer() as f64 / *self.mean_codes_per_sample.denom() as f64
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.record_count)?;
        writeln!(
            f,
            "unique diagnoses: {} (on a total of {} code occurrences)",
            self.unique_diagnosis_count, self.total_code_count
        )?;
        writeln!(f, "mean ICD-10 codes per sample: {:.2}", self.mean_as_f64())?;
        writeln!(
            f,
            "most common diagnosis: {} ({} records)",
            self.most_common_code, self.most_common_count
        )?;
        let example = self.rarest_codes.iter().next().map(|c| c.to_string()).unwrap_or_default();
        write!(
            f,
            "rarest diagnoses: {} codes seen {} time(s) (e.g. {})",
            self.rarest_codes.len(),
            self.rarest_count,
            example
        )
    }
}

/// Counts over gold codes; ties for most common go to the
/// lexicographically smallest normalized code.
pub fn corpus_stats(records: &[ClinicalRecord]) -> Result<CorpusStats, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&Icd10Code, usize> = BTreeMap::new();
    let mut total = 0usize;
    for r in records {
        for c in &r.gold_codes {
            *counts.entry(c).or_default() += 1;
            total += 1;
        }
    }
    // BTreeMap iterates in normalized order, so max_by_key with a reversed
    // tie-break keeps the smallest code among equals.
    let (most_common, most_count) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(c, n)| ((*c).clone(), *n))
        .ok_or(PipelineError::EmptyCorpus)?;
    let rarest_count = counts.values().copied().min().unwrap_or(0);
    let rarest_codes = counts
        .iter()
        .filter(|(_, n)| **n == rarest_count)
        .map(|(c, _)| (*c).clone())
        .collect();
    Ok(CorpusStats {
        record_count: records.len(),
        unique_diagnosis_count: counts.len(),
        total_code_count: total,
        mean_codes_per_sample: Ratio::new(total as u64, records.len() as u64),
        most_common_code: most_common,
        most_common_count: most_count,
        rarest_codes,
        rarest_count,
    })
}
