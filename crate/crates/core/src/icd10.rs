//! ICD-10 code grammar, normalization and hierarchy rollup.
//!
//! A code such as `E10.9` is normalized to the dot-free form `E109`; its
//! first three characters (`E10`) are the disease *category*, and the
//! category falls into exactly one *chapter* range of a [`ChapterTable`]
//! (`E00-E89` for the endocrine chapter of ICD-10-CM).
//!
//! Validity comes in two tiers. The syntactic check is always available.
//! Membership in a [`CodeTable`] is only known when a table was loaded, so
//! [`Icd10Code::table_valid`] is an `Option`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const DEFAULT_CHAPTERS_CSV: &str = include_str!("../data/icd10cm_chapters.csv");
const WHO_CHAPTERS_CSV: &str = include_str!("../data/icd10who_chapters.csv");
const SAMPLE_CODES_CSV: &str = include_str!("../data/icd10cm_sample_codes.csv");

#[derive(Debug, Error)]
pub enum Icd10Error {
    #[error("empty code token")]
    EmptyToken,
    #[error("no code table loaded")]
    TableNotLoaded,
    #[error("chapter table row {row}: {reason}")]
    BadChapterRow { row: usize, reason: String },
    #[error("code table row {row}: `{code}` is not a syntactically valid ICD-10 code")]
    BadCodeRow { row: usize, code: String },
    #[error("chapter ranges {first} and {second} overlap")]
    OverlappingChapters { first: String, second: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Identifier of a chapter, e.g. `E00-E89`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChapterId(pub String);

impl ChapterId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChapterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One normalized ICD-10 code.
///
/// Equality and hashing use the normalized form only; `raw` keeps whatever
/// text the code was read from.
#[derive(Debug, Clone)]
pub struct Icd10Code {
    raw: String,
    normalized: String,
    syntactic_valid: bool,
    chapter: Option<ChapterId>,
    table_valid: Option<bool>,
}

impl PartialEq for Icd10Code {
    fn eq(&self, other: &Self) -> bool {
        self.normalized == other.normalized
    }
}

impl Eq for Icd10Code {}

impl std::hash::Hash for Icd10Code {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.normalized.hash(state);
    }
}

impl PartialOrd for Icd10Code {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Icd10Code {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.normalized.cmp(&other.normalized)
    }
}

impl Icd10Code {
    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Uppercase, dot-free form (`E109`).
    pub fn normalized(&self) -> &str {
        &self.normalized
    }

    pub fn is_syntactically_valid(&self) -> bool {
        self.syntactic_valid
    }

    /// The 3-character category, defined only for syntactically valid codes.
    pub fn category(&self) -> Option<&str> {
        self.syntactic_valid.then(|| &self.normalized[..3])
    }

    /// `None` stands for the Invalid chapter.
    pub fn chapter(&self) -> Option<&ChapterId> {
        self.chapter.as_ref()
    }

    pub fn table_valid(&self) -> Option<bool> {
        self.table_valid
    }

    /// Valid for scoring: syntactically valid and not rejected by a loaded table.
    pub fn is_valid(&self) -> bool {
        self.syntactic_valid && self.table_valid != Some(false)
    }

    /// Returns a copy with `table_valid` set from `table`.
    pub fn with_table(mut self, table: &CodeTable) -> Self {
        self.table_valid = Some(table.contains(self.normalized()));
        self
    }

    /// Re-assigns the chapter using a non-default table.
    pub fn with_chapters(mut self, chapters: &ChapterTable) -> Self {
        self.chapter = self.category().and_then(|c| chapters.lookup(c)).cloned();
        self
    }

    /// Conventional rendering: `E10.9`, `G35`. Invalid codes render as
    /// their normalized text, which normalizes back to itself.
    pub fn display(&self) -> String {
        if self.syntactic_valid && self.normalized.len() > 3 {
            format!("{}.{}", &self.normalized[..3], &self.normalized[3..])
        } else {
            self.normalized.clone()
        }
    }
}

impl fmt::Display for Icd10Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

impl Serialize for Icd10Code {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.display())
    }
}

impl<'de> Deserialize<'de> for Icd10Code {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        normalize(&s).map_err(serde::de::Error::custom)
    }
}

/// Syntactic grammar: one letter, two alphanumerics, then up to four
/// alphanumerics. `U` is accepted so that special-purpose codes such as
/// `U07.1` roll up to their chapter.
pub fn is_syntactically_valid(normalized: &str) -> bool {
    let bytes = normalized.as_bytes();
    (3..=7).contains(&bytes.len())
        && bytes[0].is_ascii_uppercase()
        && bytes[1..]
            .iter()
            .all(|b| b.is_ascii_digit() || b.is_ascii_uppercase())
}

/// Normalizes a raw token against the default ICD-10-CM chapter table.
pub fn normalize(raw: &str) -> Result<Icd10Code, Icd10Error> {
    normalize_with(raw, ChapterTable::default_cm())
}

pub fn normalize_with(raw: &str, chapters: &ChapterTable) -> Result<Icd10Code, Icd10Error> {
    let upper = raw.trim().to_uppercase();
    let trimmed = upper.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        return Err(Icd10Error::EmptyToken);
    }
    // A single dot right after the category is cosmetic; anything else is
    // kept so the token stays recognizably malformed.
    let normalized = if trimmed.matches('.').count() == 1 && trimmed.find('.') == Some(3) {
        trimmed.replacen('.', "", 1)
    } else {
        trimmed.to_string()
    };
    let syntactic_valid = is_syntactically_valid(&normalized);
    let chapter = if syntactic_valid {
        chapters.lookup(&normalized[..3]).cloned()
    } else {
        None
    };
    Ok(Icd10Code {
        raw: raw.to_string(),
        normalized,
        syntactic_valid,
        chapter,
        table_valid: None,
    })
}

/// Splits a free-text codes field on commas, semicolons and whitespace.
///
/// Output keeps first-occurrence order and is duplicate-free on the
/// normalized form. Tokens that trim to nothing are skipped; tokens that
/// do not parse are kept as syntactically invalid codes.
pub fn parse_code_list(codes_field: &str) -> Vec<Icd10Code> {
    parse_code_list_with(codes_field, ChapterTable::default_cm())
}

pub fn parse_code_list_with(codes_field: &str, chapters: &ChapterTable) -> Vec<Icd10Code> {
    let mut seen = HashSet::new();
    codes_field
        .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter_map(|tok| normalize_with(tok, chapters).ok())
        .filter(|code| seen.insert(code.normalized.clone()))
        .collect()
}

/// Chapter lookup that treats syntactically invalid codes as Invalid.
pub fn chapter_of<'t>(code: &Icd10Code, table: &'t ChapterTable) -> Option<&'t ChapterId> {
    code.category().and_then(|c| table.lookup(c))
}

/// Membership test against a loaded code table.
pub fn check_table(code: &Icd10Code, table: Option<&CodeTable>) -> Result<bool, Icd10Error> {
    table
        .map(|t| t.contains(code.normalized()))
        .ok_or(Icd10Error::TableNotLoaded)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChapterRow {
    pub id: ChapterId,
    pub start: String,
    pub end: String,
    pub label: String,
}

/// Ordered, disjoint category ranges. Comparison is lexicographic on the
/// 3-character category.
#[derive(Debug, Clone)]
pub struct ChapterTable {
    rows: Vec<ChapterRow>,
}

impl ChapterTable {
    /// The 22 ICD-10-CM chapters. Lookup spans run to the end of each
    /// letter block so that every syntactically valid category, letters
    /// in the last two places included, lands in exactly one chapter.
    pub fn default_cm() -> &'static ChapterTable {
        static TABLE: OnceLock<ChapterTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            ChapterTable::from_reader(DEFAULT_CHAPTERS_CSV.as_bytes())
                .expect("bundled ICD-10-CM chapter table is well formed")
        })
    }

    /// WHO ICD-10 chapters (`E00-E90` etc.); has gaps between chapters.
    pub fn who() -> ChapterTable {
        ChapterTable::from_reader(WHO_CHAPTERS_CSV.as_bytes())
            .expect("bundled WHO chapter table is well formed")
    }

    pub fn new(mut rows: Vec<ChapterRow>) -> Result<Self, Icd10Error> {
        for (i, row) in rows.iter().enumerate() {
            for bound in [&row.start, &row.end] {
                if bound.len() != 3 || !is_syntactically_valid(bound) {
                    return Err(Icd10Error::BadChapterRow {
                        row: i + 1,
                        reason: format!("`{bound}` is not a 3-character category"),
                    });
                }
            }
            if row.start > row.end {
                return Err(Icd10Error::BadChapterRow {
                    row: i + 1,
                    reason: format!("start {} after end {}", row.start, row.end),
                });
            }
        }
        rows.sort_by(|a, b| a.start.cmp(&b.start));
        for pair in rows.windows(2) {
            if pair[1].start <= pair[0].end {
                return Err(Icd10Error::OverlappingChapters {
                    first: pair[0].id.to_string(),
                    second: pair[1].id.to_string(),
                });
            }
        }
        Ok(Self { rows })
    }

    /// Reads `chapter_id,start,end,label` rows; a header row is expected.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, Icd10Error> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Icd10Error::BadChapterRow {
                    row: i + 1,
                    reason: "expected chapter_id,start,end,label".into(),
                });
            }
            rows.push(ChapterRow {
                id: ChapterId(rec[0].to_string()),
                start: rec[1].to_uppercase(),
                end: rec[2].to_uppercase(),
                label: rec.get(3).unwrap_or_default().to_string(),
            });
        }
        Self::new(rows)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, Icd10Error> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn rows(&self) -> &[ChapterRow] {
        &self.rows
    }

    pub fn lookup(&self, category: &str) -> Option<&ChapterId> {
        // rows are sorted and disjoint: the candidate is the last row
        // starting at or before the category
        let idx = self.rows.partition_point(|r| r.start.as_str() <= category);
        let row = self.rows.get(idx.checked_sub(1)?)?;
        (category <= row.end.as_str()).then_some(&row.id)
    }

    pub fn label(&self, id: &ChapterId) -> Option<&str> {
        self.rows.iter().find(|r| &r.id == id).map(|r| r.label.as_str())
    }
}

/// How table membership is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMatch {
    /// The normalized code must be a table entry.
    #[default]
    Exact,
    /// Also accept a code that is a strict prefix of some entry, i.e. a
    /// non-billable parent such as `E78` when only `E785` is listed.
    PrefixExtension,
}

/// Known codes with descriptions.
#[derive(Debug, Clone, Default)]
pub struct CodeTable {
    codes: BTreeMap<String, String>,
    policy: TableMatch,
}

impl CodeTable {
    /// A small bundled ICD-10-CM subset, enough for synthetic data and tests.
    pub fn bundled_sample() -> CodeTable {
        CodeTable::from_reader(SAMPLE_CODES_CSV.as_bytes())
            .expect("bundled sample code table is well formed")
    }

    /// Reads `code,description` rows. A first row whose code column is
    /// literally `code` is treated as a header.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, Icd10Error> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut codes = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let raw = rec.get(0).unwrap_or_default();
            if i == 0 && raw.eq_ignore_ascii_case("code") {
                continue;
            }
            if raw.is_empty() {
                continue;
            }
            let code = normalize(raw).map_err(|_| Icd10Error::BadCodeRow {
                row: i + 1,
                code: raw.to_string(),
            })?;
            if !code.is_syntactically_valid() {
                return Err(Icd10Error::BadCodeRow { row: i + 1, code: raw.to_string() });
            }
            codes.insert(code.normalized, rec.get(1).unwrap_or_default().to_string());
        }
        Ok(Self { codes, policy: TableMatch::Exact })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, Icd10Error> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn with_policy(mut self, policy: TableMatch) -> Self {
        self.policy = policy;
        self
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn contains(&self, normalized: &str) -> bool {
        if self.codes.contains_key(normalized) {
            return true;
        }
        match self.policy {
            TableMatch::Exact => false,
            TableMatch::PrefixExtension => self
                .codes
                .range::<str, _>((std::ops::Bound::Excluded(normalized), std::ops::Bound::Unbounded))
                .next()
                .is_some_and(|(k, _)| k.starts_with(normalized)),
        }
    }

    pub fn description(&self, normalized: &str) -> Option<&str> {
        self.codes.get(normalized).map(String::as_str)
    }

    /// Codes in normalized lexicographic order.
    pub fn codes(&self) -> impl Iterator<Item = (&str, &str)> {
        self.codes.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn normalized_set(&self) -> BTreeSet<&str> {
        self.codes.keys().map(String::as_str).collect()
    }
}
