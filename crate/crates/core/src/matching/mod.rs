//! Matching extracted objects against ground truth.
//!
//! Hallucinated objects are mentions with no counterpart among the
//! ground-truth objects; uncovered objects are ground-truth objects no
//! mention accounts for. The lexicon matcher decides this with a
//! [`SynonymTable`]; the LLM matcher asks the model with the matching and
//! coverage prompts.

mod synonyms;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use synonyms::{SynonymTable, DEFAULT_SYNONYMS};

use crate::error::{Error, Result};
use crate::extraction::normalize::{canonicalize, sentence_count, word_count, Singularizer};
use crate::extraction::{Caption, ObjectMention};
use crate::llm_client::{parse_list_literal, render_list_literal, LlmClient, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub image_id: String,
    pub objects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<BTreeMap<String, u32>>,
}

#[derive(Debug, Deserialize)]
struct GroundTruthEntry {
    objects: Vec<String>,
    #[serde(default)]
    counts: Option<BTreeMap<String, u32>>,
}

impl GroundTruthSet {
    pub fn new(image_id: impl Into<String>, objects: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { image_id: image_id.into(), objects: objects.into_iter().map(Into::into).collect(), counts: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.iter().all(|o| o.trim().is_empty()) {
            return Err(Error::InvalidInput(format!("image {:?} has no ground-truth objects", self.image_id)));
        }
        if let Some(counts) = &self.counts {
            if let Some((name, _)) = counts.iter().find(|(_, n)| **n == 0) {
                return Err(Error::InvalidInput(format!(
                    "image {:?}: count for {name:?} must be positive",
                    self.image_id
                )));
            }
        }
        Ok(())
    }

    /// Parses a JSON object mapping image id to `{objects, counts}`.
    pub fn parse_map(text: &str, origin: &str) -> Result<BTreeMap<String, GroundTruthSet>> {
        let raw: BTreeMap<String, GroundTruthEntry> =
            serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        raw.into_iter()
            .map(|(image_id, e)| {
                let gt = GroundTruthSet { image_id: image_id.clone(), objects: e.objects, counts: e.counts };
                gt.validate()?;
                Ok((image_id, gt))
            })
            .collect()
    }

    pub fn load_map(path: &Path) -> Result<BTreeMap<String, GroundTruthSet>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_map(&text, &path.display().to_string())
    }
}

/// Keeps the first item of each canonical form, dropping empty ones.
/// Returns `(original, canonical)` pairs in input order.
fn dedup_canonical(items: &[String], s: &Singularizer) -> Vec<(String, String)> {
    let mut seen = HashSet::new();
    items
        .iter()
        .filter_map(|it| {
            let c = canonicalize(it, s);
            (!c.is_empty() && seen.insert(c.clone())).then(|| (it.clone(), c))
        })
        .collect()
}

/// Mentions that nothing in `gt` accounts for, as given (deduplicated).
pub fn match_hallucination(gt: &[String], mentions: &[String], table: &SynonymTable) -> Vec<String> {
    unmatched(mentions, gt, table)
}

/// Ground-truth objects that no mention accounts for, as given (deduplicated).
pub fn match_coverage(mentions: &[String], gt: &[String], table: &SynonymTable) -> Vec<String> {
    unmatched(gt, mentions, table)
}

fn unmatched(items: &[String], against: &[String], table: &SynonymTable) -> Vec<String> {
    let universe: Vec<String> =
        dedup_canonical(against, table.singularizer()).into_iter().map(|(_, c)| c).collect();
    dedup_canonical(items, table.singularizer())
        .into_iter()
        .filter(|(_, c)| !table.matched_by(c, &universe))
        .map(|(orig, _)| orig)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Hallucination,
    Coverage,
}

/// Asks the LLM which items are unmatched, using the hallucination or the
/// coverage prompt. The answer is restricted to the items that could legally
/// appear: mentions for hallucination, ground truth for coverage.
pub fn match_llm(
    gt: &[String],
    mentions: &[String],
    direction: Direction,
    client: &LlmClient,
    singularizer: &Singularizer,
) -> Result<Vec<String>> {
    let (legal, other) = match direction {
        Direction::Hallucination => (mentions, gt),
        Direction::Coverage => (gt, mentions),
    };
    let legal = dedup_canonical(legal, singularizer);
    if legal.is_empty() {
        return Ok(Vec::new());
    }
    if other.is_empty() {
        return Ok(legal.into_iter().map(|(o, _)| o).collect());
    }
    let template = match direction {
        Direction::Hallucination => TemplateId::Hallucinate,
        Direction::Coverage => TemplateId::Cover,
    };
    let mut subs = BTreeMap::new();
    subs.insert("gt".to_owned(), render_list_literal(gt));
    subs.insert("cap_obj".to_owned(), render_list_literal(mentions));
    let request = client.request(template, subs);
    let answer = match parse_list_literal(&client.complete(&request)?) {
        Ok(items) => items,
        Err(Error::UnparsableOutput { .. }) if !client.is_replay() => {
            parse_list_literal(&client.complete_uncached(&request)?)?
        }
        Err(e) => return Err(e),
    };
    let named: HashSet<String> = answer.iter().map(|a| canonicalize(a, singularizer)).collect();
    Ok(legal.into_iter().filter(|(_, c)| named.contains(c)).map(|(o, _)| o).collect())
}

/// Decides hallucination and coverage for one caption.
pub trait Matcher: Sync {
    fn hallucinated(&self, gt: &[String], mentions: &[String]) -> Result<Vec<String>>;
    fn uncovered(&self, mentions: &[String], gt: &[String]) -> Result<Vec<String>>;
}

pub struct LexiconMatcher {
    pub table: SynonymTable,
}

impl Matcher for LexiconMatcher {
    fn hallucinated(&self, gt: &[String], mentions: &[String]) -> Result<Vec<String>> {
        Ok(match_hallucination(gt, mentions, &self.table))
    }

    fn uncovered(&self, mentions: &[String], gt: &[String]) -> Result<Vec<String>> {
        Ok(match_coverage(mentions, gt, &self.table))
    }
}

pub struct LlmMatcher<'a> {
    pub client: &'a LlmClient,
    pub singularizer: Singularizer,
}

impl Matcher for LlmMatcher<'_> {
    fn hallucinated(&self, gt: &[String], mentions: &[String]) -> Result<Vec<String>> {
        match_llm(gt, mentions, Direction::Hallucination, self.client, &self.singularizer)
    }

    fn uncovered(&self, mentions: &[String], gt: &[String]) -> Result<Vec<String>> {
        match_llm(gt, mentions, Direction::Coverage, self.client, &self.singularizer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionEntry {
    pub canonical: String,
    pub indicated: bool,
    #[serde(default)]
    pub sentences: Vec<usize>,
}

/// Per-caption matching outcome. All object names are canonical.
///
/// `covered_gt_plain` and `covered_gt_indicated` are the ground-truth objects
/// covered by the non-indicated and by the indicated mentions alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub caption_id: String,
    pub image_id: String,
    pub mentioned: Vec<MentionEntry>,
    pub hallucinated: Vec<String>,
    pub matched: Vec<String>,
    pub covered_gt: Vec<String>,
    pub uncovered_gt: Vec<String>,
    pub covered_gt_plain: Vec<String>,
    pub covered_gt_indicated: Vec<String>,
    pub n_words: usize,
    pub n_sentences: usize,
}

impl MatchReport {
    pub fn is_hallucinated(&self, canonical: &str) -> bool {
        self.hallucinated.iter().any(|h| h == canonical)
    }

    pub fn gt_total(&self) -> usize {
        self.covered_gt.len() + self.uncovered_gt.len()
    }

    /// Checks both partition invariants.
    pub fn check(&self) -> Result<()> {
        let mentioned: HashSet<&str> = self.mentioned.iter().map(|m| m.canonical.as_str()).collect();
        let h: HashSet<&str> = self.hallucinated.iter().map(String::as_str).collect();
        let m: HashSet<&str> = self.matched.iter().map(String::as_str).collect();
        let c: HashSet<&str> = self.covered_gt.iter().map(String::as_str).collect();
        let u: HashSet<&str> = self.uncovered_gt.iter().map(String::as_str).collect();
        let ok = mentioned.len() == self.mentioned.len()
            && h.is_disjoint(&m)
            && h.union(&m).copied().collect::<HashSet<_>>() == mentioned
            && h.len() + m.len() == self.mentioned.len()
            && c.is_disjoint(&u)
            && c.len() + u.len() == self.gt_total()
            && self.covered_gt_plain.iter().all(|g| c.contains(g.as_str()))
            && self.covered_gt_indicated.iter().all(|g| c.contains(g.as_str()));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("match report for {:?} violates its partitions", self.caption_id)))
        }
    }
}

/// Matches one caption's mentions against its image's ground truth.
pub fn build_report(
    caption: &Caption,
    mentions: &[ObjectMention],
    gt: &GroundTruthSet,
    matcher: &dyn Matcher,
    singularizer: &Singularizer,
) -> Result<MatchReport> {
    let mut mentioned: Vec<MentionEntry> = Vec::new();
    for m in mentions {
        let canonical = canonicalize(&m.canonical, singularizer);
        if canonical.is_empty() {
            continue;
        }
        match mentioned.iter_mut().find(|e| e.canonical == canonical) {
            Some(e) => {
                e.indicated &= m.indicated;
                for s in &m.sentences {
                    if !e.sentences.contains(s) {
                        e.sentences.push(*s);
                    }
                }
                e.sentences.sort_unstable();
            }
            None => mentioned.push(MentionEntry { canonical, indicated: m.indicated, sentences: m.sentences.clone() }),
        }
    }
    let gt_objects: Vec<String> =
        dedup_canonical(&gt.objects, singularizer).into_iter().map(|(_, c)| c).collect();

    let all: Vec<String> = mentioned.iter().map(|m| m.canonical.clone()).collect();
    let plain: Vec<String> = mentioned.iter().filter(|m| !m.indicated).map(|m| m.canonical.clone()).collect();
    let indicated: Vec<String> = mentioned.iter().filter(|m| m.indicated).map(|m| m.canonical.clone()).collect();

    let hallucinated_set: HashSet<String> = matcher.hallucinated(&gt_objects, &all)?.into_iter().collect();
    let (hallucinated, matched): (Vec<String>, Vec<String>) =
        all.iter().cloned().partition(|c| hallucinated_set.contains(c));

    let covered_by = |subset: &[String]| -> Result<Vec<String>> {
        if subset.is_empty() {
            return Ok(Vec::new());
        }
        let uncovered: HashSet<String> = matcher.uncovered(subset, &gt_objects)?.into_iter().collect();
        Ok(gt_objects.iter().filter(|g| !uncovered.contains(*g)).cloned().collect())
    };
    let covered_gt = covered_by(&all)?;
    let covered_gt_plain = if indicated.is_empty() { covered_gt.clone() } else { covered_by(&plain)? };
    let covered_gt_indicated = if plain.is_empty() { covered_gt.clone() } else { covered_by(&indicated)? };
    let uncovered_gt = gt_objects.iter().filter(|g| !covered_gt.contains(g)).cloned().collect();

    let clean = caption.clean_text();
    let report = MatchReport {
        caption_id: caption.id.clone(),
        image_id: caption.image_id.clone(),
        mentioned,
        hallucinated,
        matched,
        covered_gt,
        uncovered_gt,
        covered_gt_plain,
        covered_gt_indicated,
        n_words: word_count(&clean),
        n_sentences: sentence_count(&clean).max(1),
    };
    report.check().map_err(|_| Error::InvalidInput(format!("matcher produced an inconsistent report for {:?}", caption.id)))?;
    Ok(report)
}
