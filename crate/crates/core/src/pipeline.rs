//! Caption batch evaluation: extract, match, summarize.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::extraction::normalize::Singularizer;
use crate::extraction::{validate_batch, Caption, ExtractionRecord, Extractor};
use crate::matching::{build_report, GroundTruthSet, MatchReport, Matcher};
use crate::metrics::{summarize_with, ChairSDenominator, EvalMode, EvalSummary, SentenceUnit};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub extractions: Vec<ExtractionRecord>,
    pub reports: Vec<MatchReport>,
    pub summary: EvalSummary,
}

/// Extracts and matches one caption.
pub fn evaluate_caption(
    caption: &Caption,
    ground_truth: &BTreeMap<String, GroundTruthSet>,
    extractor: &dyn Extractor,
    matcher: &dyn Matcher,
    singularizer: &Singularizer,
) -> Result<(ExtractionRecord, MatchReport)> {
    let gt = ground_truth.get(&caption.image_id).ok_or_else(|| {
        Error::InvalidInput(format!("caption {:?}: no ground truth for image {:?}", caption.id, caption.image_id))
    })?;
    let mentions = extractor.extract(caption)?;
    let report = build_report(caption, &mentions, gt, matcher, singularizer)?;
    Ok((ExtractionRecord { caption_id: caption.id.clone(), mentions }, report))
}

/// Sorts per-caption results by caption id and summarizes them.
pub fn assemble(
    results: Vec<(ExtractionRecord, MatchReport)>,
    mode: EvalMode,
    unit: SentenceUnit,
) -> Result<EvalOutput> {
    assemble_with(results, mode, unit, ChairSDenominator::Eligible)
}

pub fn assemble_with(
    mut results: Vec<(ExtractionRecord, MatchReport)>,
    mode: EvalMode,
    unit: SentenceUnit,
    denominator: ChairSDenominator,
) -> Result<EvalOutput> {
    results.sort_by(|a, b| a.0.caption_id.cmp(&b.0.caption_id));
    let (extractions, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = summarize_with(&reports, mode, unit, denominator)?;
    Ok(EvalOutput { extractions, reports, summary })
}

pub fn evaluate(
    captions: &[Caption],
    ground_truth: &BTreeMap<String, GroundTruthSet>,
    extractor: &dyn Extractor,
    matcher: &dyn Matcher,
    singularizer: &Singularizer,
    mode: EvalMode,
    unit: SentenceUnit,
) -> Result<EvalOutput> {
    validate_batch(captions)?;
    let results = captions
        .iter()
        .map(|c| evaluate_caption(c, ground_truth, extractor, matcher, singularizer))
        .collect::<Result<Vec<_>>>()?;
    assemble(results, mode, unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{LexiconExtractor, ObjectLexicon};
    use crate::matching::{LexiconMatcher, SynonymTable};

    #[test]
    fn small_batch() {
        let captions = vec![
            Caption::new("b", "img2", "A cat sits on a sofa next to a [dog]."),
            Caption::new("a", "img1", "Two dogs play with a frisbee on the grass."),
        ];
        let mut gt = BTreeMap::new();
        gt.insert("img1".to_owned(), GroundTruthSet::new("img1", ["dog", "frisbee", "tree"]));
        gt.insert("img2".to_owned(), GroundTruthSet::new("img2", ["cat", "couch"]));
        let ex = LexiconExtractor { lexicon: ObjectLexicon::default_english() };
        let m = LexiconMatcher { table: SynonymTable::default() };
        let s = Singularizer::default();
        let out = evaluate(&captions, &gt, &ex, &m, &s, EvalMode::Standard, SentenceUnit::Caption).unwrap();
        assert_eq!(out.reports[0].caption_id, "a");
        // Mentions: dog, frisbee, grass | cat, sofa, dog. Hallucinated: grass, dog.
        assert_eq!(out.summary.counts.hallucinated, 2);
        assert_eq!(out.summary.counts.mentioned, 6);
        assert_eq!(out.summary.chair_s, 100.0);
        assert_eq!(out.summary.coverage, 80.0);

        let wo = evaluate(&captions, &gt, &ex, &m, &s, EvalMode::ExcludeIndicated, SentenceUnit::Caption).unwrap();
        assert_eq!(wo.summary.chair_s, 50.0);

        let mut missing = captions.clone();
        missing.push(Caption::new("c", "img9", "A tree."));
        assert!(evaluate(&missing, &gt, &ex, &m, &s, EvalMode::Standard, SentenceUnit::Caption).is_err());
    }
}
