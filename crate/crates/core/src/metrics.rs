//! Caption-level hallucination metrics.
//!
//! All rates are percentages. Every metric is a ratio of two integer counts;
//! [`RawCounts`] keeps those counts so shards can be merged before dividing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{MatchReport, MentionEntry};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every mentioned object counts.
    Standard,
    /// Only bracket-indicated objects; captions without any are skipped.
    OnlyIndicated,
    /// Indicated objects are ignored entirely.
    ExcludeIndicated,
    /// Indicated objects are never hallucinations but still count as mentions.
    IncludeIndicated,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] =
        [EvalMode::Standard, EvalMode::OnlyIndicated, EvalMode::ExcludeIndicated, EvalMode::IncludeIndicated];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Standard => "standard",
            EvalMode::OnlyIndicated => "only-ind",
            EvalMode::ExcludeIndicated => "wo-ind",
            EvalMode::IncludeIndicated => "w-ind",
        }
    }

    /// Whether a mention counts towards the object totals.
    fn counts_mention(self, m: &MentionEntry) -> bool {
        match self {
            EvalMode::Standard | EvalMode::IncludeIndicated => true,
            EvalMode::OnlyIndicated => m.indicated,
            EvalMode::ExcludeIndicated => !m.indicated,
        }
    }

    /// Whether a hallucinated mention counts as a hallucination.
    fn counts_hallucination(self, m: &MentionEntry) -> bool {
        match self {
            EvalMode::Standard => true,
            EvalMode::OnlyIndicated => m.indicated,
            EvalMode::ExcludeIndicated | EvalMode::IncludeIndicated => !m.indicated,
        }
    }

    fn eligible(self, r: &MatchReport) -> bool {
        self != EvalMode::OnlyIndicated || r.mentioned.iter().any(|m| m.indicated)
    }

    fn covered(self, r: &MatchReport) -> usize {
        match self {
            EvalMode::Standard | EvalMode::IncludeIndicated => r.covered_gt.len(),
            EvalMode::OnlyIndicated => r.covered_gt_indicated.len(),
            EvalMode::ExcludeIndicated => r.covered_gt_plain.len(),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "standard" => Ok(EvalMode::Standard),
            "only-ind" | "only-indicated" => Ok(EvalMode::OnlyIndicated),
            "wo-ind" | "exclude-ind" | "exclude-indicated" => Ok(EvalMode::ExcludeIndicated),
            "w-ind" | "include-ind" | "include-indicated" => Ok(EvalMode::IncludeIndicated),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected standard, only-ind, wo-ind or w-ind)"
            ))),
        }
    }
}

/// What CHAIR_s counts: whole captions or individual sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceUnit {
    #[default]
    Caption,
    Sentence,
}

impl FromStr for SentenceUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption" => Ok(SentenceUnit::Caption),
            "sentence" => Ok(SentenceUnit::Sentence),
            other => Err(Error::InvalidConfig(format!("unknown CHAIR_s unit {other:?}"))),
        }
    }
}

/// CHAIR_s denominator in only-indicated mode: eligible captions alone, or
/// every caption with the skipped ones counting as hallucination-free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChairSDenominator {
    #[default]
    Eligible,
    All,
}

impl FromStr for ChairSDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eligible" => Ok(ChairSDenominator::Eligible),
            "all" => Ok(ChairSDenominator::All),
            other => Err(Error::InvalidConfig(format!("unknown CHAIR_s denominator {other:?} (expected eligible or all)"))),
        }
    }
}

/// Numerators and denominators behind every metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCounts {
    /// Eligible captions.
    pub captions: usize,
    pub skipped: usize,
    pub hallucinated: usize,
    pub mentioned: usize,
    pub hallucinated_units: usize,
    pub units: usize,
    pub covered_gt: usize,
    pub total_gt: usize,
    pub words: usize,
    /// CHAIR_s units belonging to skipped captions.
    #[serde(default)]
    pub skipped_units: usize,
}

impl RawCounts {
    pub fn tally(reports: &[MatchReport], mode: EvalMode, unit: SentenceUnit) -> Self {
        let mut c = RawCounts::default();
        for r in reports {
            if !mode.eligible(r) {
                c.skipped += 1;
                c.skipped_units += match unit {
                    SentenceUnit::Caption => 1,
                    SentenceUnit::Sentence => r.n_sentences,
                };
                continue;
            }
            c.captions += 1;
            c.words += r.n_words;
            c.covered_gt += mode.covered(r);
            c.total_gt += r.gt_total();
            let hallucinating: Vec<&MentionEntry> = r
                .mentioned
                .iter()
                .filter(|m| mode.counts_hallucination(m) && r.is_hallucinated(&m.canonical))
                .collect();
            c.mentioned += r.mentioned.iter().filter(|m| mode.counts_mention(m)).count();
            c.hallucinated += hallucinating.len();
            match unit {
                SentenceUnit::Caption => {
                    c.units += 1;
                    c.hallucinated_units += usize::from(!hallucinating.is_empty());
                }
                SentenceUnit::Sentence => {
                    for s in 0..r.n_sentences {
                        let in_sentence = |m: &MentionEntry| sentences_of(m).contains(&s);
                        if mode == EvalMode::OnlyIndicated
                            && !r.mentioned.iter().any(|m| m.indicated && in_sentence(m))
                        {
                            continue;
                        }
                        c.units += 1;
                        c.hallucinated_units += usize::from(hallucinating.iter().any(|m| in_sentence(m)));
                    }
                }
            }
        }
        c
    }

    pub fn merge(self, o: RawCounts) -> RawCounts {
        RawCounts {
            captions: self.captions + o.captions,
            skipped: self.skipped + o.skipped,
            hallucinated: self.hallucinated + o.hallucinated,
            mentioned: self.mentioned + o.mentioned,
            hallucinated_units: self.hallucinated_units + o.hallucinated_units,
            units: self.units + o.units,
            covered_gt: self.covered_gt + o.covered_gt,
            total_gt: self.total_gt + o.total_gt,
            words: self.words + o.words,
            skipped_units: self.skipped_units + o.skipped_units,
        }
    }

    pub fn summary(self, mode: EvalMode, unit: SentenceUnit) -> Result<EvalSummary> {
        self.summary_with(mode, unit, ChairSDenominator::Eligible)
    }

    pub fn summary_with(self, mode: EvalMode, unit: SentenceUnit, denominator: ChairSDenominator) -> Result<EvalSummary> {
        let units = match denominator {
            ChairSDenominator::Eligible => self.units,
            ChairSDenominator::All => self.units + self.skipped_units,
        };
        let chair_s = ratio(self.hallucinated_units, units, "chair_s")?;
        let chair_i = ratio(self.hallucinated, self.mentioned, "chair_i")?;
        let coverage = ratio(self.covered_gt, self.total_gt, "coverage")?;
        let (avg_length, avg_objects) = self.averages(mode)?;
        Ok(EvalSummary {
            schema_version: SCHEMA_VERSION,
            mode,
            unit,
            chair_s,
            chair_i,
            coverage,
            avg_length,
            avg_objects,
            n_captions: self.captions,
            n_skipped: self.skipped,
            counts: self,
            label: None,
            epsilon: None,
        })
    }

    fn averages(self, mode: EvalMode) -> Result<(Option<f64>, f64)> {
        if self.captions == 0 {
            return Err(Error::EmptyDenominator { metric: "averages" });
        }
        let n = self.captions as f64;
        let len = (mode != EvalMode::OnlyIndicated).then(|| self.words as f64 / n);
        Ok((len, self.mentioned as f64 / n))
    }
}

/// A located mention with no sentence information is attributed to the
/// first sentence.
fn sentences_of(m: &MentionEntry) -> &[usize] {
    if m.sentences.is_empty() {
        &[0]
    } else {
        &m.sentences
    }
}

fn ratio(num: usize, den: usize, metric: &'static str) -> Result<f64> {
    if den == 0 {
        return Err(Error::EmptyDenominator { metric });
    }
    Ok(100.0 * num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub mode: EvalMode,
    pub unit: SentenceUnit,
    pub chair_s: f64,
    pub chair_i: f64,
    pub coverage: f64,
    /// Absent in only-indicated mode.
    pub avg_length: Option<f64>,
    pub avg_objects: f64,
    pub n_captions: usize,
    pub n_skipped: usize,
    pub counts: RawCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

pub fn chair_i(reports: &[MatchReport], mode: EvalMode) -> Result<f64> {
    let c = RawCounts::tally(reports, mode, SentenceUnit::Caption);
    ratio(c.hallucinated, c.mentioned, "chair_i")
}

pub fn chair_s(reports: &[MatchReport], mode: EvalMode, unit: SentenceUnit) -> Result<f64> {
    let c = RawCounts::tally(reports, mode, unit);
    ratio(c.hallucinated_units, c.units, "chair_s")
}

pub fn coverage(reports: &[MatchReport], mode: EvalMode) -> Result<f64> {
    let c = RawCounts::tally(reports, mode, SentenceUnit::Caption);
    ratio(c.covered_gt, c.total_gt, "coverage")
}

/// Average words and average counted objects per eligible caption.
pub fn averages(reports: &[MatchReport], mode: EvalMode) -> Result<(Option<f64>, f64)> {
    RawCounts::tally(reports, mode, SentenceUnit::Caption).averages(mode)
}

pub fn summarize(reports: &[MatchReport], mode: EvalMode, unit: SentenceUnit) -> Result<EvalSummary> {
    RawCounts::tally(reports, mode, unit).summary(mode, unit)
}

pub fn summarize_with(
    reports: &[MatchReport],
    mode: EvalMode,
    unit: SentenceUnit,
    denominator: ChairSDenominator,
) -> Result<EvalSummary> {
    RawCounts::tally(reports, mode, unit).summary_with(mode, unit, denominator)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_owned(), |x| format!("{x:.2}"))
}

/// Markdown table with one row per `(label, summary)`.
pub fn markdown_table(rows: &[(String, &EvalSummary)], first_header: &str) -> String {
    let mut out = format!(
        "| {first_header} | CHAIR_s↓ | CHAIR_i↓ | Coverage↑ | Avg. Length↑ | Avg. Object↑ |\n|---|---:|---:|---:|---:|---:|\n"
    );
    for (label, s) in rows {
        out.push_str(&format!(
            "| {label} | {} | {} | {} | {} | {} |\n",
            cell(Some(s.chair_s)),
            cell(Some(s.chair_i)),
            cell(Some(s.coverage)),
            cell(s.avg_length),
            cell(Some(s.avg_objects)),
        ));
    }
    out
}
