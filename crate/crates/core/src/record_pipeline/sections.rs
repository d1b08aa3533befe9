//! Splits discharge-note text into named sections.
//!
//! A line opens a section when, after leading whitespace, it starts with
//! one of the canonical headings (any case) followed by either the end of
//! the line or a colon. Text after the colon becomes the first body line.
//! Short title-case lines ending in a colon (`Allergies:`, `Family
//! History:`) open an [`SectionName::Other`] section; all-caps sub-headings
//! such as `ADMISSION LABS:` stay inside the current body.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionName {
    ChiefComplaint,
    HistoryOfPresentIllness,
    SocialHistory,
    PhysicalExam,
    PertinentResults,
    MajorSurgicalOrInvasiveProcedure,
    BriefHospitalCourse,
    MedicationsOnAdmission,
    DischargeMedications,
    DischargeDiagnosis,
    DischargeCondition,
    DischargeInstructions,
    Other,
}

impl SectionName {
    /// The twelve sections every retained record must carry.
    pub const REQUIRED: [SectionName; 12] = [
        SectionName::ChiefComplaint,
        SectionName::HistoryOfPresentIllness,
        SectionName::SocialHistory,
        SectionName::PhysicalExam,
        SectionName::PertinentResults,
        SectionName::MajorSurgicalOrInvasiveProcedure,
        SectionName::BriefHospitalCourse,
        SectionName::MedicationsOnAdmission,
        SectionName::DischargeMedications,
        SectionName::DischargeDiagnosis,
        SectionName::DischargeCondition,
        SectionName::DischargeInstructions,
    ];

    /// Sections that carry the answer and are withheld from every prompt.
    pub const DISCHARGE: [SectionName; 4] = [
        SectionName::DischargeMedications,
        SectionName::DischargeDiagnosis,
        SectionName::DischargeCondition,
        SectionName::DischargeInstructions,
    ];

    /// Lowercase heading text as it appears in notes.
    pub fn heading(self) -> &'static str {
        match self {
            SectionName::ChiefComplaint => "chief complaint",
            SectionName::HistoryOfPresentIllness => "history of present illness",
            SectionName::SocialHistory => "social history",
            SectionName::PhysicalExam => "physical exam",
            SectionName::PertinentResults => "pertinent results",
            SectionName::MajorSurgicalOrInvasiveProcedure => "major surgical or invasive procedure",
            SectionName::BriefHospitalCourse => "brief hospital course",
            SectionName::MedicationsOnAdmission => "medications on admission",
            SectionName::DischargeMedications => "discharge medications",
            SectionName::DischargeDiagnosis => "discharge diagnosis",
            SectionName::DischargeCondition => "discharge condition",
            SectionName::DischargeInstructions => "discharge instructions",
            SectionName::Other => "other",
        }
    }

    /// Title-case heading used when rendering notes.
    pub fn title(self) -> String {
        let h = self.heading();
        let mut out = String::with_capacity(h.len());
        let mut first = true;
        for word in h.split(' ') {
            if !first {
                out.push(' ');
            }
            if !first && matches!(word, "of" | "or" | "on") {
                out.push_str(word);
            } else {
                let mut cs = word.chars();
                if let Some(c) = cs.next() {
                    out.extend(c.to_uppercase());
                    out.push_str(cs.as_str());
                }
            }
            first = false;
        }
        out
    }
}

impl fmt::Display for SectionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.heading())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: SectionName,
    /// The heading as written (`Chief Complaint:`); empty for a preamble.
    pub heading: String,
    pub body: String,
}

/// Ordered sections of one note.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoteSections {
    sections: Vec<Section>,
}

impl NoteSections {
    pub fn new(sections: Vec<Section>) -> Result<Self, PipelineError> {
        let mut seen = Vec::new();
        for s in &sections {
            if s.name != SectionName::Other {
                if seen.contains(&s.name) {
                    return Err(PipelineError::DuplicateHeading(s.name));
                }
                seen.push(s.name);
            }
        }
        Ok(Self { sections })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Section> {
        self.sections.iter()
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn get(&self, name: SectionName) -> Option<&str> {
        debug_assert_ne!(name, SectionName::Other);
        self.sections.iter().find(|s| s.name == name).map(|s| s.body.as_str())
    }

    pub fn canonical_count(&self) -> usize {
        self.sections.iter().filter(|s| s.name != SectionName::Other).count()
    }

    /// Required sections that are absent or have a blank body.
    pub fn missing_required(&self) -> Vec<SectionName> {
        SectionName::REQUIRED
            .into_iter()
            .filter(|n| self.get(*n).is_none_or(|b| b.trim().is_empty()))
            .collect()
    }

    /// Headings and bodies in order, one per line.
    pub fn render(&self) -> String {
        self.render_filtered(|_| true)
    }

    /// Renders every section for which `keep` returns true.
    pub fn render_filtered(&self, keep: impl Fn(&Section) -> bool) -> String {
        let mut out = String::new();
        for s in self.sections.iter().filter(|s| keep(s)) {
            if !out.is_empty() {
                out.push('\n');
            }
            if !s.heading.is_empty() {
                out.push_str(&s.heading);
                out.push('\n');
            }
            out.push_str(&s.body);
            out.push('\n');
        }
        out
    }
}

/// Collapses all whitespace runs to a single space.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

enum LineKind<'a> {
    Canonical { name: SectionName, heading: &'a str, inline: &'a str },
    Other { heading: &'a str },
    Body,
}

fn classify(line: &str) -> LineKind<'_> {
    let t = line.trim();
    for name in SectionName::REQUIRED {
        let h = name.heading();
        if t.len() >= h.len() && t.is_char_boundary(h.len()) && t[..h.len()].eq_ignore_ascii_case(h) {
            let rest = &t[h.len()..];
            if rest.trim().is_empty() {
                return LineKind::Canonical { name, heading: t, inline: "" };
            }
            if let Some(after) = rest.trim_start().strip_prefix(':') {
                let heading_len = t.len() - after.len();
                return LineKind::Canonical {
                    name,
                    heading: &t[..heading_len],
                    inline: after.trim(),
                };
            }
        }
    }
    if is_other_heading(t) {
        return LineKind::Other { heading: t };
    }
    LineKind::Body
}

fn is_other_heading(t: &str) -> bool {
    let Some(title) = t.strip_suffix(':') else {
        return false;
    };
    let title = title.trim_end();
    let mut chars = title.chars();
    let starts_upper = chars.next().is_some_and(|c| c.is_ascii_uppercase());
    starts_upper
        && title.len() <= 48
        && title.split_whitespace().count() <= 5
        && title.chars().any(|c| c.is_ascii_lowercase())
        && title
            .chars()
            .all(|c| c.is_ascii_alphabetic() || matches!(c, ' ' | '/' | '&' | '\'' | '-' | '(' | ')'))
}

fn push_section(
    out: &mut Vec<Section>,
    name: SectionName,
    heading: &str,
    lines: &[&str],
) {
    let body = lines.join("\n").trim().to_string();
    if name == SectionName::Other && heading.is_empty() && body.is_empty() {
        return;
    }
    out.push(Section { name, heading: heading.to_string(), body });
}

/// Parses a note into ordered sections.
pub fn parse_sections(note_text: &str) -> Result<NoteSections, PipelineError> {
    if note_text.trim().is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut sections = Vec::new();
    let mut current: (SectionName, &str) = (SectionName::Other, "");
    let mut body: Vec<&str> = Vec::new();

    for line in note_text.lines() {
        match classify(line) {
            LineKind::Canonical { name, heading, inline } => {
                push_section(&mut sections, current.0, current.1, &body);
                current = (name, heading);
                body.clear();
                if !inline.is_empty() {
                    body.push(inline);
                }
            }
            LineKind::Other { heading } => {
                push_section(&mut sections, current.0, current.1, &body);
                current = (SectionName::Other, heading);
                body.clear();
            }
            LineKind::Body => body.push(line),
        }
    }
    push_section(&mut sections, current.0, current.1, &body);
    NoteSections::new(sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn full_fixture() -> String {
        SectionName::REQUIRED
            .iter()
            .map(|n| format!("{}:\n{} body text", n.title(), n.heading()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    #[test]
    fn twelve_headings_twelve_sections() {
        let text = full_fixture();
        let parsed = parse_sections(&text).unwrap();
        assert_eq!(parsed.canonical_count(), 12);
        assert_eq!(parsed.len(), 12);
        assert_eq!(parsed.get(SectionName::SocialHistory), Some("social history body text"));
        assert!(parsed.missing_required().is_empty());
        assert_eq!(normalize_whitespace(&parsed.render()), normalize_whitespace(&text));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse_sections(""), Err(PipelineError::EmptyInput)));
        assert!(matches!(parse_sections(" \n\t"), Err(PipelineError::EmptyInput)));
    }

    #[test]
    fn missing_heading_leaves_eleven() {
        let text = full_fixture().replace("Social History:\nsocial history body text", "");
        let parsed = parse_sections(&text).unwrap();
        assert_eq!(parsed.canonical_count(), 11);
        assert_eq!(parsed.missing_required(), vec![SectionName::SocialHistory]);
    }

    #[test]
    fn duplicate_heading_is_an_error() {
        let text = format!("{}\nchief complaint:\nagain", full_fixture());
        assert!(matches!(
            parse_sections(&text),
            Err(PipelineError::DuplicateHeading(SectionName::ChiefComplaint))
        ));
    }

    #[test]
    fn heading_variants() {
        let text = "  CHIEF COMPLAINT: chest pain\nHistory of Present Illness\n  two days of pain\n";
        let parsed = parse_sections(text).unwrap();
        assert_eq!(parsed.get(SectionName::ChiefComplaint), Some("chest pain"));
        assert_eq!(parsed.get(SectionName::HistoryOfPresentIllness), Some("two days of pain"));
        let first = parsed.iter().next().unwrap();
        assert_eq!(first.heading, "CHIEF COMPLAINT:");
    }

    #[test]
    fn prose_starting_with_a_heading_word_is_body() {
        let text = "Discharge Condition:\nstable\ndischarge condition was discussed with family\n";
        let parsed = parse_sections(text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(
            parsed.get(SectionName::DischargeCondition),
            Some("stable\ndischarge condition was discussed with family")
        );
    }

    #[test]
    fn unrecognized_headings_and_preamble_go_to_other() {
        let text = "Name:  ___  Unit No: ___\n\nAllergies:\nNo Known Allergies\n\nChief Complaint:\nfever\nPertinent Results:\nADMISSION LABS:\nWBC 12\nFamily History:\nnoncontributory\n";
        let parsed = parse_sections(text).unwrap();
        let names: Vec<_> = parsed.iter().map(|s| (s.name, s.heading.as_str())).collect();
        assert_eq!(
            names,
            vec![
                (SectionName::Other, ""),
                (SectionName::Other, "Allergies:"),
                (SectionName::ChiefComplaint, "Chief Complaint:"),
                (SectionName::PertinentResults, "Pertinent Results:"),
                (SectionName::Other, "Family History:"),
            ]
        );
        assert_eq!(parsed.get(SectionName::PertinentResults), Some("ADMISSION LABS:\nWBC 12"));
        assert_eq!(normalize_whitespace(&parsed.render()), normalize_whitespace(text));
    }

    #[test]
    fn titles() {
        assert_eq!(SectionName::HistoryOfPresentIllness.title(), "History of Present Illness");
        assert_eq!(
            SectionName::MajorSurgicalOrInvasiveProcedure.title(),
            "Major Surgical or Invasive Procedure"
        );
        assert_eq!(SectionName::MedicationsOnAdmission.title(), "Medications on Admission");
    }
}
