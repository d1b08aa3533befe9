use std::fmt;

use serde::{Deserialize, Serialize};

use super::{NoteSections, SectionName};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum DropReason {
    MissingSection(SectionName),
    DeceasedOrExpired,
    NoCodes,
    Malformed(String),
}

impl DropReason {
    /// Stable label used when tallying drop counts.
    pub fn kind(&self) -> &'static str {
        match self {
            DropReason::MissingSection(_) => "missing_section",
            DropReason::DeceasedOrExpired => "deceased_or_expired",
            DropReason::NoCodes => "no_icd10_codes",
            DropReason::Malformed(_) => "malformed",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::MissingSection(s) => write!(f, "missing section `{s}`"),
            DropReason::DeceasedOrExpired => f.write_str("patient deceased or expired"),
            DropReason::NoCodes => f.write_str("no ICD-10 codes"),
            DropReason::Malformed(m) => write!(f, "malformed note: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

/// Keeps a note iff all twelve required sections are non-empty and the
/// status text mentions neither "deceased" nor "expired".
pub fn filter_record(sections: &NoteSections, status: &str) -> FilterDecision {
    if let Some(missing) = sections.missing_required().first() {
        return FilterDecision::Drop(DropReason::MissingSection(*missing));
    }
    let status = status.to_lowercase();
    if status.contains("deceased") || status.contains("expired") {
        return FilterDecision::Drop(DropReason::DeceasedOrExpired);
    }
    FilterDecision::Keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record_pipeline::parse_sections;

    fn note(skip: Option<SectionName>, condition: &str) -> NoteSections {
        let text = SectionName::REQUIRED
            .iter()
            .filter(|n| Some(**n) != skip)
            .map(|n| {
                let body = if *n == SectionName::DischargeCondition { condition } else { "text" };
                format!("{}:\n{}", n.title(), body)
            })
            .collect::<Vec<_>>()
            .join("\n");
        parse_sections(&text).unwrap()
    }

    #[test]
    fn keeps_complete_stable_record() {
        assert_eq!(filter_record(&note(None, "stable"), "stable"), FilterDecision::Keep);
    }

    #[test]
    fn drops_expired_any_case() {
        for status in ["Expired", "patient DECEASED on hospital day 3", "expired."] {
            assert_eq!(
                filter_record(&note(None, status), status),
                FilterDecision::Drop(DropReason::DeceasedOrExpired)
            );
        }
    }

    #[test]
    fn drops_missing_section() {
        let s = note(Some(SectionName::PertinentResults), "stable");
        assert_eq!(
            filter_record(&s, "stable"),
            FilterDecision::Drop(DropReason::MissingSection(SectionName::PertinentResults))
        );
    }

    #[test]
    fn blank_body_counts_as_missing() {
        let text = "Chief Complaint:\n\nSocial History:\nlives alone";
        let s = parse_sections(text).unwrap();
        assert_eq!(
            filter_record(&s, "stable"),
            FilterDecision::Drop(DropReason::MissingSection(SectionName::ChiefComplaint))
        );
    }
}
