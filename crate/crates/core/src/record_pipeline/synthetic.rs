//! Format-conforming synthetic discharge notes.
//!
//! Notes follow the usual discharge-summary layout (preamble, the twelve
//! required sections, plus a few unrecognized headings) so that they
//! exercise the same parser and filters as real data. Gold codes are drawn
//! from a [`CodeTable`] with a handful of common codes up-weighted; the
//! per-record code count is `1 + Poisson(mean - 1)`.

use rand::distr::weighted::WeightedIndex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{parse_sections, ClinicalRecord, DiagnosisRow, NoteRow, SectionName};
use crate::icd10::{normalize, CodeTable, Icd10Code};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Target mean number of gold codes per record.
    pub mean_codes: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { mean_codes: 5.61 }
    }
}

/// Composition of a raw (pre-filter) corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawCorpusSpec {
    pub valid: usize,
    pub deceased: usize,
    pub malformed: usize,
}

impl RawCorpusSpec {
    pub fn new(valid: usize, deceased: usize, malformed: usize) -> Self {
        Self { valid, deceased, malformed }
    }

    pub fn total(&self) -> usize {
        self.valid + self.deceased + self.malformed
    }
}

const PREVALENT: &[(&str, f64)] = &[
    ("E785", 10.0),
    ("I10", 9.0),
    ("Z87891", 6.0),
    ("K219", 6.0),
    ("F329", 5.0),
    ("I2510", 5.0),
    ("F419", 5.0),
    ("N179", 4.0),
    ("Z7901", 4.0),
    ("E119", 4.0),
    ("E039", 4.0),
    ("Z794", 3.0),
    ("I4891", 3.0),
    ("G4733", 3.0),
];

const COMPLAINTS: &[&str] = &[
    "Chest pain",
    "Shortness of breath",
    "Fever and chills",
    "Abdominal pain",
    "Altered mental status",
    "Fall at home",
    "Generalized weakness",
    "Nausea and vomiting",
    "Syncope",
    "Productive cough",
    "Lower extremity swelling",
    "Palpitations",
    "Jaw swelling",
    "Headache",
    "Dizziness",
];

const HISTORY: &[&str] = &[
    "hypertension",
    "hyperlipidemia",
    "type 2 diabetes",
    "coronary artery disease",
    "atrial fibrillation on anticoagulation",
    "COPD",
    "chronic kidney disease",
    "hypothyroidism",
    "depression",
    "obstructive sleep apnea",
    "GERD",
];

const SOCIAL: &[&str] = &[
    "Lives with spouse. Former smoker, quit 10 years ago. Occasional alcohol.",
    "Lives alone. Never smoker. No alcohol or illicit drug use.",
    "Lives with daughter. Current smoker, half pack per day.",
];

const PROCEDURES: &[&str] = &[
    "None",
    "Cardiac catheterization",
    "Upper endoscopy",
    "Central line placement",
    "Thoracentesis",
    "Incision and drainage",
    "Lumbar puncture",
];

const MEDS: &[&str] = &[
    "Aspirin 81 mg PO DAILY",
    "Atorvastatin 40 mg PO QPM",
    "Lisinopril 10 mg PO DAILY",
    "Metoprolol Succinate XL 50 mg PO DAILY",
    "Metformin 500 mg PO BID",
    "Levothyroxine 75 mcg PO DAILY",
    "Omeprazole 20 mg PO DAILY",
    "Sertraline 50 mg PO DAILY",
    "Apixaban 5 mg PO BID",
    "Furosemide 20 mg PO DAILY",
    "Albuterol inhaler 2 PUFF IH Q4H PRN",
    "Insulin glargine 20 units SC QHS",
];

const THERAPIES: &[&str] = &[
    "IV fluids and electrolyte repletion",
    "IV antibiotics",
    "IV diuresis",
    "rate control and anticoagulation",
    "supportive care and serial exams",
    "pain control and physical therapy",
];

const CONDITIONS: &[&str] = &[
    "Mental Status: Clear and coherent.\nLevel of Consciousness: Alert and interactive.\nActivity Status: Ambulatory - Independent.",
    "Mental Status: Clear and coherent.\nLevel of Consciousness: Alert and interactive.\nActivity Status: Ambulatory - requires assistance or aid (walker or cane).",
    "Stable. Tolerating a regular diet. Ambulating with assistance.",
];

const END_OF_LIFE: &[&str] = &["Expired.", "Patient deceased.", "EXPIRED"];

fn code_sampler(table: &CodeTable) -> (Vec<Icd10Code>, WeightedIndex<f64>) {
    let codes: Vec<Icd10Code> = table
        .codes()
        .map(|(c, _)| normalize(c).expect("table codes are valid"))
        .collect();
    let weights: Vec<f64> = codes
        .iter()
        .map(|c| {
            PREVALENT
                .iter()
                .find(|(p, _)| *p == c.normalized())
                .map_or(1.0, |(_, w)| *w)
        })
        .collect();
    let dist = WeightedIndex::new(&weights).expect("code table must not be empty");
    (codes, dist)
}

fn draw_codes(
    rng: &mut ChaCha8Rng,
    codes: &[Icd10Code],
    dist: &WeightedIndex<f64>,
    mean: f64,
) -> Vec<Icd10Code> {
    let extra = if mean > 1.0 {
        Poisson::new(mean - 1.0).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    let want = (1 + extra).min(codes.len());
    let mut picked: Vec<Icd10Code> = Vec::with_capacity(want);
    while picked.len() < want {
        let c = &codes[dist.sample(rng)];
        if !picked.contains(c) {
            picked.push(c.clone());
        }
    }
    picked
}

struct NoteParts {
    complaint: &'static str,
    diagnosis: String,
    condition: String,
    omit: Option<SectionName>,
}

fn render_note(rng: &mut ChaCha8Rng, parts: &NoteParts) -> String {
    let age = rng.random_range(24..92);
    let sex = if rng.random_bool(0.5) { "F" } else { "M" };
    let pmh: Vec<&str> = HISTORY.choose_multiple(rng, 2).copied().collect();
    let days = rng.random_range(1..8);
    let therapy = THERAPIES.choose(rng).copied().unwrap_or_default();
    let procedure = PROCEDURES.choose(rng).copied().unwrap_or_default();
    let admit_meds: Vec<&str> = MEDS.choose_multiple(rng, 3).copied().collect();
    let dc_meds: Vec<&str> = MEDS.choose_multiple(rng, 4).copied().collect();
    let complaint_lc = parts.complaint.to_lowercase();
    let social = SOCIAL.choose(rng).copied().unwrap_or_default();

    let body = |name: SectionName| -> String {
        match name {
            SectionName::ChiefComplaint => parts.complaint.to_string(),
            SectionName::HistoryOfPresentIllness => format!(
                "{age} year old {} with a history of {} and {} who presents with {} for {days} days. \
                 Symptoms worsened on the day of admission prompting evaluation in the emergency department.",
                if sex == "F" { "woman" } else { "man" },
                pmh[0],
                pmh[1],
                complaint_lc
            ),
            SectionName::SocialHistory => social.to_string(),
            SectionName::PhysicalExam => format!(
                "ADMISSION EXAM:\nVS: T 98.{} HR {} BP {}/{} RR {} O2 sat {}% RA\nGEN: NAD, resting comfortably\nHEENT: MMM, oropharynx clear\nCV: RRR, no murmurs\nLUNGS: clear bilaterally\nABD: soft, nontender",
                days, 60 + age % 40, 100 + age % 50, 60 + age % 25, 14 + days, 92 + days
            ),
            SectionName::PertinentResults => format!(
                "ADMISSION LABS:\nWBC-{}.{} Hgb-1{}.{} Plt-{}\nNa-13{} K-4.{} Cr-1.{}",
                6 + days, age % 10, days, age % 10, 150 + age, days, age % 10, days
            ),
            SectionName::MajorSurgicalOrInvasiveProcedure => procedure.to_string(),
            SectionName::BriefHospitalCourse => format!(
                "Patient admitted for evaluation of {complaint_lc}. Managed with {therapy}. \
                 Clinical status improved over {days} days and the patient was ready for discharge."
            ),
            SectionName::MedicationsOnAdmission => admit_meds
                .iter()
                .enumerate()
                .map(|(i, m)| format!("{}. {m}", i + 1))
                .collect::<Vec<_>>()
                .join("\n"),
            SectionName::DischargeMedications => dc_meds
                .iter()
                .enumerate()
                .map(|(i, m)| format!("{}. {m}", i + 1))
                .collect::<Vec<_>>()
                .join("\n"),
            SectionName::DischargeDiagnosis => parts.diagnosis.clone(),
            SectionName::DischargeCondition => parts.condition.clone(),
            SectionName::DischargeInstructions => format!(
                "Dear {},\nYou were admitted to the hospital because of {complaint_lc}. \
                 Please take your medications as prescribed and keep your follow-up appointments.",
                if sex == "F" { "Ms. ___" } else { "Mr. ___" }
            ),
            SectionName::Other => String::new(),
        }
    };

    let mut out = format!(
        "Name:  ___                     Unit No:   ___\n \nAdmission Date:  ___              Discharge Date:   ___\n \nSex:   {sex}\n \nService: MEDICINE\n \nAllergies: \nNo Known Allergies / Adverse Drug Reactions\n \nAttending: ___.\n \n"
    );
    for name in SectionName::REQUIRED {
        if Some(name) == parts.omit {
            continue;
        }
        out.push_str(&name.title());
        out.push_str(":\n");
        out.push_str(&body(name));
        out.push_str("\n \n");
        if name == SectionName::DischargeMedications {
            out.push_str("Discharge Disposition:\nHome\n \n");
        }
    }
    out.push_str("Followup Instructions:\n___\n");
    out
}

fn diagnosis_text(codes: &[Icd10Code], table: &CodeTable) -> String {
    let desc = |c: &Icd10Code| table.description(c.normalized()).unwrap_or("Unspecified condition").to_string();
    let mut text = format!("PRIMARY:\n{}", desc(&codes[0]));
    if codes.len() > 1 {
        text.push_str("\n\nSECONDARY:\n");
        text.push_str(&codes[1..].iter().map(desc).collect::<Vec<_>>().join("\n"));
    }
    text
}

/// Deterministic synthetic records; every record passes the inclusion
/// filters.
pub fn generate_synthetic(seed: u64, n: usize, code_table: &CodeTable, config: &SynthConfig) -> Vec<ClinicalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (codes, dist) = code_sampler(code_table);
    (0..n)
        .map(|i| {
            let gold = draw_codes(&mut rng, &codes, &dist, config.mean_codes);
            let parts = NoteParts {
                complaint: COMPLAINTS.choose(&mut rng).copied().unwrap_or_default(),
                diagnosis: diagnosis_text(&gold, code_table),
                condition: CONDITIONS.choose(&mut rng).copied().unwrap_or_default().to_string(),
                omit: None,
            };
            let note = render_note(&mut rng, &parts);
            let sections = parse_sections(&note).expect("synthetic notes parse");
            ClinicalRecord::new(format!("syn-{seed}-{i:05}"), sections, gold)
                .expect("synthetic records pass the filters")
        })
        .collect()
}

/// A raw notes + diagnoses corpus before filtering: `valid` keepable
/// records, `deceased` records whose condition says expired/deceased and
/// `malformed` records missing one required section. Each valid record
/// also carries one ICD-9 diagnosis row.
pub fn generate_raw_corpus(
    seed: u64,
    spec: &RawCorpusSpec,
    code_table: &CodeTable,
) -> (Vec<NoteRow>, Vec<DiagnosisRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (codes, dist) = code_sampler(code_table);
    let mut kinds: Vec<u8> = std::iter::repeat_n(0u8, spec.valid)
        .chain(std::iter::repeat_n(1, spec.deceased))
        .chain(std::iter::repeat_n(2, spec.malformed))
        .collect();
    // interleave kinds deterministically
    for i in (1..kinds.len()).rev() {
        let j = rng.random_range(0..=i);
        kinds.swap(i, j);
    }
    let mut notes = Vec::with_capacity(kinds.len());
    let mut diags = Vec::new();
    let mut malformed_seen = 0usize;
    for (i, kind) in kinds.into_iter().enumerate() {
        let record_id = format!("raw-{seed}-{i:05}");
        let gold = draw_codes(&mut rng, &codes, &dist, SynthConfig::default().mean_codes);
        let condition = match kind {
            1 => END_OF_LIFE.choose(&mut rng).copied().unwrap_or_default().to_string(),
            _ => CONDITIONS.choose(&mut rng).copied().unwrap_or_default().to_string(),
        };
        let omit = (kind == 2).then(|| {
            // never drop the condition section, so the drop reason is unambiguous
            let candidates: Vec<SectionName> = SectionName::REQUIRED
                .into_iter()
                .filter(|s| *s != SectionName::DischargeCondition)
                .collect();
            let s = candidates[malformed_seen % candidates.len()];
            malformed_seen += 1;
            s
        });
        let parts = NoteParts {
            complaint: COMPLAINTS.choose(&mut rng).copied().unwrap_or_default(),
            diagnosis: diagnosis_text(&gold, code_table),
            condition,
            omit,
        };
        notes.push(NoteRow { record_id: record_id.clone(), note_text: render_note(&mut rng, &parts) });
        for c in &gold {
            diags.push(DiagnosisRow {
                record_id: record_id.clone(),
                icd_code: c.normalized().to_string(),
                icd_version: 10,
            });
        }
        diags.push(DiagnosisRow { record_id, icd_code: "4019".into(), icd_version: 9 });
    }
    (notes, diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record_pipeline::corpus_stats;

    #[test]
    fn same_seed_same_records() {
        let t = CodeTable::bundled_sample();
        let a = generate_synthetic(5, 20, &t, &SynthConfig::default());
        let b = generate_synthetic(5, 20, &t, &SynthConfig::default());
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(6, 20, &t, &SynthConfig::default()));
    }

    #[test]
    fn records_are_complete_and_gold_is_in_table() {
        let t = CodeTable::bundled_sample();
        for r in generate_synthetic(2, 200, &t, &SynthConfig::default()) {
            assert!(r.validate().is_ok());
            assert!(r.sections.missing_required().is_empty());
            assert!(r.gold_codes.iter().all(|c| t.contains(c.normalized())));
        }
    }

    #[test]
    fn mean_code_count_tracks_config() {
        let t = CodeTable::bundled_sample();
        let recs = generate_synthetic(11, 10_000, &t, &SynthConfig::default());
        let mean = corpus_stats(&recs).unwrap().mean_as_f64();
        assert!((mean - 5.61).abs() < 0.1, "{mean}");
    }

    #[test]
    fn gold_codes_do_not_appear_outside_diagnosis_section() {
        let t = CodeTable::bundled_sample();
        for r in generate_synthetic(3, 100, &t, &SynthConfig::default()) {
            let note = r.redacted_note();
            for c in &r.gold_codes {
                assert!(!note.contains(&c.display()), "{} leaked", c.display());
            }
            assert!(!note.contains(&r.gold_diagnosis_text));
        }
    }
}
