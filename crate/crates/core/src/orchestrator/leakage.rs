//! Checks that gold discharge content does not reach agents or clients.

use std::collections::BTreeSet;

use crate::record_pipeline::{normalize_whitespace, ClinicalRecord};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Leak {
    DiagnosisText,
    Code(String),
}

/// Whether `text` contains the gold diagnosis text (whitespace-insensitive).
pub fn contains_gold_diagnosis(text: &str, record: &ClinicalRecord) -> bool {
    let gold = normalize_whitespace(&record.gold_diagnosis_text);
    !gold.is_empty() && normalize_whitespace(text).contains(&gold)
}

/// Gold codes appearing as whole tokens in `text`, dotted or not.
pub fn gold_code_tokens(text: &str, record: &ClinicalRecord) -> BTreeSet<String> {
    let wanted: Vec<(String, String)> = record
        .gold_codes
        .iter()
        .map(|c| (c.normalized().to_string(), c.display().to_ascii_uppercase()))
        .collect();
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '.'))
        .map(|t| t.trim_matches('.').to_ascii_uppercase())
        .filter_map(|t| wanted.iter().find(|(n, d)| t == *n || t == *d).map(|(n, _)| n.clone()))
        .collect()
}

pub fn scan(text: &str, record: &ClinicalRecord) -> Vec<Leak> {
    let mut leaks = Vec::new();
    if contains_gold_diagnosis(text, record) {
        leaks.push(Leak::DiagnosisText);
    }
    leaks.extend(gold_code_tokens(text, record).into_iter().map(Leak::Code));
    leaks
}
