//! Set-based scoring of predicted against gold ICD-10 codes.
//!
//! Both code sets are first rolled up to the requested granularity
//! (3-character category or chapter id) and deduplicated. Predictions that
//! cannot be rolled up (syntactically invalid, absent from a loaded code
//! table, or outside every chapter) stay in the prediction set as sentinels
//! that match nothing. All arithmetic is exact; rounding only happens when
//! rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::exact;
use crate::icd10::{ChapterTable, CodeTable, Icd10Code};
use crate::orchestrator::RunCase;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold code set is empty")]
    EmptyGold,
    #[error("nothing to aggregate")]
    EmptyGroup,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Category,
    Chapter,
}

impl Granularity {
    pub fn label(self) -> &'static str {
        match self {
            Granularity::Category => "Disease Category",
            Granularity::Chapter => "Disease Chapter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleScore {
    pub granularity: Granularity,
    #[serde(with = "exact")]
    pub jaccard: BigRational,
    #[serde(with = "exact")]
    pub precision: BigRational,
    #[serde(with = "exact")]
    pub recall: BigRational,
    #[serde(with = "exact")]
    pub f1: BigRational,
    /// Distinct predicted codes that are invalid or absent from the table.
    pub hallucination_count: usize,
    /// Distinct predicted codes before rollup.
    pub prediction_count: usize,
}

impl SampleScore {
    pub fn zero(granularity: Granularity) -> Self {
        Self {
            granularity,
            jaccard: BigRational::zero(),
            precision: BigRational::zero(),
            recall: BigRational::zero(),
            f1: BigRational::zero(),
            hallucination_count: 0,
            prediction_count: 0,
        }
    }
}

/// Category and chapter scores for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub category: SampleScore,
    pub chapter: SampleScore,
}

impl ScorePair {
    /// The all-zero score assigned to failed sessions.
    pub fn failed() -> Self {
        Self {
            category: SampleScore::zero(Granularity::Category),
            chapter: SampleScore::zero(Granularity::Chapter),
        }
    }

    pub fn get(&self, g: Granularity) -> &SampleScore {
        match g {
            Granularity::Category => &self.category,
            Granularity::Chapter => &self.chapter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Real(String),
    GoldUnmapped(String),
    PredUnmapped(String),
}

/// Tables used for rollup and hallucination checks.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub chapters: &'a ChapterTable,
    pub codes: Option<&'a CodeTable>,
}

impl Default for Scorer<'static> {
    fn default() -> Self {
        Self { chapters: ChapterTable::default_cm(), codes: None }
    }
}

impl<'a> Scorer<'a> {
    pub fn new(chapters: &'a ChapterTable, codes: Option<&'a CodeTable>) -> Self {
        Self { chapters, codes }
    }

    pub fn with_codes(self, codes: &'a CodeTable) -> Self {
        Self { codes: Some(codes), ..self }
    }

    /// Invalid syntax, or absent from the loaded code table.
    pub fn is_hallucinated(&self, code: &Icd10Code) -> bool {
        !code.is_syntactically_valid() || self.codes.is_some_and(|t| !t.contains(code.normalized()))
    }

    /// Distinct hallucinated codes in prediction order.
    pub fn hallucinated(&self, pred: &[Icd10Code]) -> Vec<Icd10Code> {
        let mut out: Vec<Icd10Code> = Vec::new();
        for c in pred {
            if self.is_hallucinated(c) && !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    fn rollup_key(&self, code: &Icd10Code, g: Granularity, gold: bool) -> Key {
        let unmapped = || {
            if gold {
                Key::GoldUnmapped(code.normalized().to_string())
            } else {
                Key::PredUnmapped(code.normalized().to_string())
            }
        };
        if !gold && self.is_hallucinated(code) {
            return unmapped();
        }
        let Some(category) = code.category() else {
            return unmapped();
        };
        match g {
            Granularity::Category => Key::Real(category.to_string()),
            Granularity::Chapter => match self.chapters.lookup(category) {
                Some(id) => Key::Real(id.as_str().to_string()),
                None => unmapped(),
            },
        }
    }

    fn rollup(&self, codes: &[Icd10Code], g: Granularity, gold: bool) -> BTreeSet<Key> {
        codes.iter().map(|c| self.rollup_key(c, g, gold)).collect()
    }

    /// Rolled-up display form of a code set (sentinels shown as the raw
    /// normalized code with a `!` prefix).
    pub fn rolled_up(&self, codes: &[Icd10Code], g: Granularity, gold: bool) -> Vec<String> {
        self.rollup(codes, g, gold)
            .into_iter()
            .map(|k| match k {
                Key::Real(s) => s,
                Key::GoldUnmapped(s) | Key::PredUnmapped(s) => format!("!{s}"),
            })
            .collect()
    }

    pub fn sample_metrics(
        &self,
        gold: &[Icd10Code],
        pred: &[Icd10Code],
        granularity: Granularity,
    ) -> Result<SampleScore, MetricsError> {
        if gold.is_empty() {
            return Err(MetricsError::EmptyGold);
        }
        let g = self.rollup(gold, granularity, true);
        let p = self.rollup(pred, granularity, false);
        let inter = p.intersection(&g).count();
        let union = p.union(&g).count();
        let precision =
            if p.is_empty() { BigRational::zero() } else { exact::from_ratio(inter, p.len()) };
        let recall = exact::from_ratio(inter, g.len());
        let jaccard = exact::from_ratio(inter, union);
        let sum = &precision + &recall;
        let f1 = if sum.is_zero() {
            BigRational::zero()
        } else {
            exact::from_ratio(2, 1) * &precision * &recall / sum
        };
        let distinct_pred: BTreeSet<&Icd10Code> = pred.iter().collect();
        Ok(SampleScore {
            granularity,
            jaccard,
            precision,
            recall,
            f1,
            hallucination_count: self.hallucinated(pred).len(),
            prediction_count: distinct_pred.len(),
        })
    }

    pub fn score_pair(&self, gold: &[Icd10Code], pred: &[Icd10Code]) -> Result<ScorePair, MetricsError> {
        Ok(ScorePair {
            category: self.sample_metrics(gold, pred, Granularity::Category)?,
            chapter: self.sample_metrics(gold, pred, Granularity::Chapter)?,
        })
    }
}

/// Scores with the default chapter table and no code table.
pub fn sample_metrics(
    gold: &[Icd10Code],
    pred: &[Icd10Code],
    granularity: Granularity,
) -> Result<SampleScore, MetricsError> {
    Scorer::default().sample_metrics(gold, pred, granularity)
}

/// One scored session as stored in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub record_id: String,
    pub case: RunCase,
    pub physician_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_model: Option<String>,
    /// Failure reason; `None` when the session was discharged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub turn_count: usize,
    pub scores: ScorePair,
}

impl SampleResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TurnStats {
    /// Mean over non-failed sessions; `None` when all failed.
    #[serde(serialize_with = "opt_exact_and_f64")]
    pub mean: Option<BigRational>,
    pub histogram: BTreeMap<usize, usize>,
    pub failure_count: usize,
}

/// Turn mean and histogram over completed sessions; failures are counted
/// separately.
pub fn turn_stats<'a>(sessions: impl IntoIterator<Item = &'a SampleResult>) -> TurnStats {
    let mut stats = TurnStats::default();
    let mut total = 0usize;
    let mut n = 0usize;
    for s in sessions {
        if s.failed() {
            stats.failure_count += 1;
        } else {
            *stats.histogram.entry(s.turn_count).or_default() += 1;
            total += s.turn_count;
            n += 1;
        }
    }
    stats.mean = (n > 0).then(|| exact::from_ratio(total, n));
    stats
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeanScores {
    #[serde(serialize_with = "exact_and_f64")]
    pub jaccard: BigRational,
    #[serde(serialize_with = "exact_and_f64")]
    pub precision: BigRational,
    #[serde(serialize_with = "exact_and_f64")]
    pub recall: BigRational,
    #[serde(serialize_with = "exact_and_f64")]
    pub f1: BigRational,
}

impl MeanScores {
    fn of<'a>(scores: impl Iterator<Item = &'a SampleScore>) -> Self {
        let mut sums = [BigRational::zero(), BigRational::zero(), BigRational::zero(), BigRational::zero()];
        let mut n = 0usize;
        for s in scores {
            sums[0] += &s.jaccard;
            sums[1] += &s.precision;
            sums[2] += &s.recall;
            sums[3] += &s.f1;
            n += 1;
        }
        let n = exact::from_ratio(n.max(1), 1);
        let [jaccard, precision, recall, f1] = sums.map(|s| s / &n);
        Self { jaccard, precision, recall, f1 }
    }

    pub fn as_array(&self) -> [&BigRational; 4] {
        [&self.jaccard, &self.precision, &self.recall, &self.f1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupReport {
    pub case: RunCase,
    pub physician_model: String,
    pub sample_count: usize,
    pub category: MeanScores,
    pub chapter: MeanScores,
    pub hallucination_count: usize,
    /// Hallucinated codes over distinct predicted codes.
    #[serde(serialize_with = "exact_and_f64")]
    pub hallucination_rate: BigRational,
    pub turns: TurnStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregateReport {
    pub groups: Vec<GroupReport>,
}

/// Groups samples by (physician model, case) and averages each group.
/// Groups come out sorted by model, then by case in table order.
pub fn aggregate(samples: &[SampleResult]) -> Result<AggregateReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut groups: BTreeMap<(&str, RunCase), Vec<&SampleResult>> = BTreeMap::new();
    for s in samples {
        groups.entry((s.physician_model.as_str(), s.case)).or_default().push(s);
    }
    let groups = groups
        .into_iter()
        .map(|((model, case), members)| {
            let hallucination_count: usize = members.iter().map(|s| s.scores.category.hallucination_count).sum();
            let predicted: usize = members.iter().map(|s| s.scores.category.prediction_count).sum();
            GroupReport {
                case,
                physician_model: model.to_string(),
                sample_count: members.len(),
                category: MeanScores::of(members.iter().map(|s| &s.scores.category)),
                chapter: MeanScores::of(members.iter().map(|s| &s.scores.chapter)),
                hallucination_count,
                hallucination_rate: if predicted == 0 {
                    BigRational::zero()
                } else {
                    exact::from_ratio(hallucination_count, predicted)
                },
                turns: turn_stats(members.iter().copied()),
            }
        })
        .collect();
    Ok(AggregateReport { groups })
}

impl AggregateReport {
    /// The two-row-header comparison table, values rounded to 2 places.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["", "", Granularity::Category.label(), "", "", "", Granularity::Chapter.label(), "", "", ""])?;
        w.write_record([
            "Agent", "Case", "Jaccard", "Precision", "Recall", "F1", "Jaccard", "Precision", "Recall", "F1",
        ])?;
        for g in &self.groups {
            let mut row = vec![g.physician_model.clone(), g.case.table_label().to_string()];
            row.extend(g.category.as_array().iter().map(|v| exact::round(v, 2)));
            row.extend(g.chapter.as_array().iter().map(|v| exact::round(v, 2)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn table_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_table_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// `agent,case,turns,count` rows over completed sessions.
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["agent", "case", "turns", "count"])?;
        for g in &self.groups {
            for (turns, count) in &g.turns.histogram {
                w.write_record([
                    g.physician_model.as_str(),
                    g.case.table_label(),
                    &turns.to_string(),
                    &count.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn histogram_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_histogram_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Writes `report.csv`, `report.json` and `turn_histogram.csv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), MetricsError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_table_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        self.write_histogram_csv(std::fs::File::create(dir.join("turn_histogram.csv"))?)?;
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(dir.join("report.json"), json)?;
        Ok(())
    }
}

impl fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table_csv())
    }
}

#[derive(Serialize)]
struct ExactValue {
    exact: String,
    value: f64,
}

fn exact_and_f64<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    ExactValue { exact: exact::to_string(r), value: exact::to_f64(r) }.serialize(s)
}

fn opt_exact_and_f64<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
    r.as_ref()
        .map(|r| ExactValue { exact: exact::to_string(r), value: exact::to_f64(r) })
        .serialize(s)
}
