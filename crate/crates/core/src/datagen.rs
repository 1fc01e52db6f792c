//! Contrastive training data.
//!
//! Ground-truth objects are split by a visibility oracle into a grounded
//! group and an omitted group. Contextual captions (label -1) mention only
//! grounded objects; joint captions (label +1) mention both, with omitted
//! objects wrapped in square brackets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::normalize::{canonicalize, canonicalize_words, tokenize, Singularizer};
use crate::extraction::parse_brackets;
use crate::io::{read_jsonl, sha256_hex, write_json, write_jsonl};
use crate::llm_client::{render_list_literal, LlmClient, TemplateId};
use crate::matching::GroundTruthSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSplit {
    pub image_id: String,
    pub grounded: Vec<String>,
    pub omitted: Vec<String>,
}

impl DetectionSplit {
    /// Checks that the split partitions `gt`.
    pub fn check(&self, gt: &GroundTruthSet) -> Result<()> {
        let g: BTreeSet<&String> = self.grounded.iter().collect();
        let o: BTreeSet<&String> = self.omitted.iter().collect();
        let all: BTreeSet<&String> = gt.objects.iter().collect();
        if !g.is_disjoint(&o) || g.union(&o).copied().collect::<BTreeSet<_>>() != all {
            return Err(Error::InvalidInput(format!("split for {:?} does not partition its objects", self.image_id)));
        }
        Ok(())
    }
}

/// Stand-in for an open-vocabulary detector: says whether an object would
/// be perceived in an image.
pub trait VisibilityOracle: Sync {
    fn visible(&self, image_id: &str, object: &str) -> Option<bool>;
}

/// Verdicts read from a file mapping image id to `{grounded, omitted}`.
#[derive(Debug, Clone, Default)]
pub struct DetectionFileOracle {
    verdicts: BTreeMap<(String, String), bool>,
}

#[derive(Deserialize)]
struct DetectionEntry {
    #[serde(default)]
    grounded: Vec<String>,
    #[serde(default)]
    omitted: Vec<String>,
}

impl DetectionFileOracle {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let raw: BTreeMap<String, DetectionEntry> = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        let s = Singularizer::default();
        let mut verdicts = BTreeMap::new();
        for (image, e) in raw {
            for (names, vis) in [(e.grounded, true), (e.omitted, false)] {
                for n in names {
                    verdicts.insert((image.clone(), canonicalize(&n, &s)), vis);
                }
            }
        }
        Ok(Self { verdicts })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

impl VisibilityOracle for DetectionFileOracle {
    fn visible(&self, image_id: &str, object: &str) -> Option<bool> {
        let key = (image_id.to_owned(), canonicalize(object, &Singularizer::default()));
        self.verdicts.get(&key).copied()
    }
}

/// Each (image, object) pair is visible with probability `p`, or with a
/// per-object probability from `overrides`. Verdicts depend only on the
/// seed, the image id and the object name.
#[derive(Debug, Clone)]
pub struct SeededRandomOracle {
    pub p: f64,
    pub seed: u64,
    pub overrides: BTreeMap<String, f64>,
}

impl SeededRandomOracle {
    pub fn new(p: f64, seed: u64) -> Self {
        Self { p, seed, overrides: BTreeMap::new() }
    }

    fn unit(&self, image_id: &str, object: &str) -> f64 {
        let material = format!("{}\u{0}{image_id}\u{0}{object}", self.seed);
        let digest = sha256_hex(material.as_bytes());
        let x = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        (x >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl VisibilityOracle for SeededRandomOracle {
    fn visible(&self, image_id: &str, object: &str) -> Option<bool> {
        let p = self.overrides.get(object).copied().unwrap_or(self.p);
        Some(self.unit(image_id, object) < p)
    }
}

/// Parses a split file: image id to `{grounded, omitted}`.
pub fn parse_splits(text: &str, origin: &str) -> Result<BTreeMap<String, DetectionSplit>> {
    let raw: BTreeMap<String, DetectionEntry> = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
    Ok(raw
        .into_iter()
        .map(|(image_id, e)| {
            let split = DetectionSplit { image_id: image_id.clone(), grounded: e.grounded, omitted: e.omitted };
            (image_id, split)
        })
        .collect())
}

pub fn load_splits(path: &Path) -> Result<BTreeMap<String, DetectionSplit>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_splits(&text, &path.display().to_string())
}

/// The split-file form of `splits`, also readable as a detection file.
pub fn splits_json(splits: &[DetectionSplit]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = splits
        .iter()
        .map(|s| (s.image_id.clone(), serde_json::json!({ "grounded": s.grounded, "omitted": s.omitted })))
        .collect();
    serde_json::Value::Object(map)
}

pub fn split_objects(gt: &GroundTruthSet, oracle: &dyn VisibilityOracle) -> Result<DetectionSplit> {
    let mut split = DetectionSplit { image_id: gt.image_id.clone(), grounded: Vec::new(), omitted: Vec::new() };
    let mut seen = BTreeSet::new();
    for obj in &gt.objects {
        if !seen.insert(obj) {
            continue;
        }
        match oracle.visible(&gt.image_id, obj) {
            Some(true) => split.grounded.push(obj.clone()),
            Some(false) => split.omitted.push(obj.clone()),
            None => return Err(Error::OracleMiss { image_id: gt.image_id.clone(), object: obj.clone() }),
        }
    }
    Ok(split)
}

/// Char ranges of word-aligned occurrences of `objects` in `text`, matched
/// case-insensitively and regardless of number, longest object first.
pub fn find_object_spans(text: &str, objects: &[String], s: &Singularizer) -> Vec<(usize, usize)> {
    let mut targets: Vec<Vec<String>> = objects
        .iter()
        .map(|o| canonicalize(o, s))
        .filter(|c| !c.is_empty())
        .map(|c| c.split(' ').map(str::to_owned).collect())
        .collect();
    targets.sort_by_key(|t| std::cmp::Reverse(t.len()));
    targets.dedup();

    let tokens = tokenize(text);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = targets.iter().find(|t| {
            let n = t.len();
            i + n <= tokens.len()
                && tokens[i + n - 1].sentence == tokens[i].sentence
                && {
                    let words: Vec<String> = tokens[i..i + n].iter().map(|t| t.word.clone()).collect();
                    canonicalize_words(&words, s).split(' ').eq(t.iter().map(String::as_str))
                }
        });
        match hit {
            Some(t) => {
                let last = &tokens[i + t.len() - 1];
                // Keep a possessive suffix outside the span.
                let surface_len = last.end - last.start;
                let end = if surface_len == last.word.chars().count() + 2 { last.end - 2 } else { last.end };
                spans.push((tokens[i].start, end));
                i += t.len();
            }
            None => i += 1,
        }
    }
    spans
}

/// Wraps every occurrence of each omitted object in square brackets.
pub fn annotate_brackets(text: &str, omitted: &[String]) -> Result<String> {
    if text.contains(['[', ']']) {
        return Err(Error::AlreadyAnnotated);
    }
    let spans = find_object_spans(text, omitted, &Singularizer::default());
    let mut out = String::with_capacity(text.len() + 2 * spans.len());
    let mut next = spans.iter().peekable();
    let mut open = false;
    for (ci, c) in text.chars().enumerate() {
        if open && next.peek().is_some_and(|s| s.1 == ci) {
            out.push(']');
            open = false;
            next.next();
        }
        if !open && next.peek().is_some_and(|s| s.0 == ci) {
            out.push('[');
            open = true;
        }
        out.push(c);
    }
    if open {
        out.push(']');
    }
    Ok(out)
}

const PATTERNS: &[&str] = &[
    "The image shows {list}.",
    "{List} can be seen.",
    "In the scene there is {list}.",
    "We can also see {list}.",
    "Nearby is {list}.",
];

fn with_article(object: &str) -> String {
    let vowel = object.chars().next().is_some_and(|c| "aeiou".contains(c));
    format!("{} {object}", if vowel { "an" } else { "a" })
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

pub enum ContextualGenerator<'a> {
    /// Fixed sentence patterns, varied by a seeded RNG.
    Template { seed: u64 },
    /// The contextual-caption prompt.
    Llm { client: &'a LlmClient },
}

/// A caption mentioning every grounded object and no omitted one.
pub fn synthesize_contextual(split: &DetectionSplit, generator: &ContextualGenerator<'_>) -> Result<String> {
    if split.grounded.is_empty() {
        return Err(Error::InvalidInput(format!("image {:?} has no grounded objects", split.image_id)));
    }
    match generator {
        ContextualGenerator::Template { seed } => Ok(template_caption(&split.image_id, &split.grounded, *seed)),
        ContextualGenerator::Llm { client } => {
            let mut subs = BTreeMap::new();
            subs.insert("objects".to_owned(), render_list_literal(&split.grounded));
            let request = client.request(TemplateId::Custom("contextual".into()), subs);
            let text = client.complete(&request)?.trim().to_owned();
            check_no_leak(&text, &split.omitted)?;
            Ok(text)
        }
    }
}

/// Rejects text mentioning any of `omitted`.
pub fn check_no_leak(text: &str, omitted: &[String]) -> Result<()> {
    let s = Singularizer::default();
    for o in omitted {
        if !find_object_spans(text, std::slice::from_ref(o), &s).is_empty() {
            return Err(Error::LeakedObject { object: o.clone() });
        }
    }
    Ok(())
}

pub(crate) fn image_rng(image_id: &str, seed: u64) -> ChaCha8Rng {
    let d = sha256_hex(format!("{seed}\u{0}{image_id}").as_bytes());
    ChaCha8Rng::seed_from_u64(u64::from_str_radix(&d[..16], 16).expect("hex digest"))
}

/// Seeded pattern caption listing `objects` with articles.
pub fn template_caption(image_id: &str, objects: &[String], seed: u64) -> String {
    let mut rng = image_rng(image_id, seed);
    let mut objs: Vec<String> = objects.iter().map(|o| with_article(o)).collect();
    objs.shuffle(&mut rng);
    let mut sentences = Vec::new();
    let mut rest = &objs[..];
    while !rest.is_empty() {
        let take = rng.random_range(1..=3).min(rest.len());
        let pattern = PATTERNS[rng.random_range(0..PATTERNS.len())];
        let list = join_list(&rest[..take]);
        sentences.push(pattern.replace("{list}", &list).replace("{List}", &capitalize(&list)));
        rest = &rest[take..];
    }
    sentences.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub epsilon_label: i8,
    pub text: String,
    pub image_id: String,
}

impl TrainingExample {
    pub fn validate(&self) -> Result<()> {
        match self.epsilon_label {
            -1 if self.text.contains(['[', ']']) => Err(Error::InvalidInput(format!(
                "contextual example for {:?} contains brackets",
                self.image_id
            ))),
            -1 => Ok(()),
            1 => parse_brackets(&self.text).map(|_| ()),
            other => Err(Error::InvalidInput(format!("epsilon label must be -1 or +1, got {other}"))),
        }
    }
}

/// Per-label counts and provenance written next to a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub records: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub images: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

/// Sorts by (image id, label), keeping input order among equals.
pub fn order_corpus(examples: &mut [TrainingExample]) {
    examples.sort_by(|a, b| (&a.image_id, a.epsilon_label).cmp(&(&b.image_id, b.epsilon_label)));
}

pub fn corpus_manifest(examples: &[TrainingExample], provenance: BTreeMap<String, String>) -> CorpusManifest {
    let mut label_counts = BTreeMap::new();
    for e in examples {
        *label_counts.entry(format!("{:+}", e.epsilon_label)).or_insert(0) += 1;
    }
    let images = examples.iter().map(|e| &e.image_id).collect::<BTreeSet<_>>().len();
    CorpusManifest { records: examples.len(), label_counts, images, provenance }
}

/// Validates, orders and writes `examples` as JSONL plus a manifest at
/// `<path>.manifest.json`.
pub fn emit_corpus(
    path: &Path,
    mut examples: Vec<TrainingExample>,
    provenance: BTreeMap<String, String>,
) -> Result<CorpusManifest> {
    for e in &examples {
        e.validate()?;
    }
    order_corpus(&mut examples);
    write_jsonl(path, &examples)?;
    let manifest = corpus_manifest(&examples, provenance);
    write_json(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

pub fn manifest_path(corpus: &Path) -> std::path::PathBuf {
    let mut name = corpus.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    corpus.with_file_name(name)
}

pub fn read_corpus(path: &Path) -> Result<Vec<TrainingExample>> {
    let examples: Vec<TrainingExample> = read_jsonl(path)?;
    for e in &examples {
        e.validate()?;
    }
    Ok(examples)
}

/// Drops indication markup from joint examples, for training without
/// bracket tokens.
pub fn strip_indication(examples: &mut [TrainingExample]) {
    for e in examples {
        if e.epsilon_label == 1 {
            e.text = crate::extraction::strip_brackets(&e.text);
        }
    }
}

/// Keeps contextual and joint examples in the ratio `contextual:joint`. The
/// scarcer side is kept whole and the other is cut to the nearest count
/// matching the ratio. Selection is seeded.
pub fn mix_corpus(examples: Vec<TrainingExample>, contextual: usize, joint: usize, seed: u64) -> Result<Vec<TrainingExample>> {
    if contextual == 0 || joint == 0 {
        return Err(Error::InvalidConfig("corpus ratio parts must be positive".into()));
    }
    let (mut neg, mut pos): (Vec<_>, Vec<_>) = examples.into_iter().partition(|e| e.epsilon_label == -1);
    let scaled = |n: usize, num: usize, den: usize| (n * num + den / 2) / den;
    let (keep_neg, keep_pos) = if neg.len() * joint >= pos.len() * contextual {
        (scaled(pos.len(), contextual, joint).min(neg.len()), pos.len())
    } else {
        (neg.len(), scaled(neg.len(), joint, contextual).min(pos.len()))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);
    neg.truncate(keep_neg);
    pos.truncate(keep_pos);
    neg.extend(pos);
    order_corpus(&mut neg);
    Ok(neg)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintReport {
    pub records: usize,
    pub contextual_with_brackets: usize,
    pub brackets_on_grounded: usize,
    pub brackets_on_unknown: usize,
    pub malformed: usize,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.contextual_with_brackets == 0 && self.brackets_on_grounded == 0 && self.brackets_on_unknown == 0 && self.malformed == 0
    }
}

/// Checks label discipline against the splits the corpus was built from:
/// contextual records carry no brackets and every bracket in a joint record
/// encloses an omitted object of its image.
pub fn lint_corpus(examples: &[TrainingExample], splits: &BTreeMap<String, DetectionSplit>) -> LintReport {
    let s = Singularizer::default();
    let mut report = LintReport { records: examples.len(), ..Default::default() };
    for e in examples {
        if e.epsilon_label == -1 {
            if e.text.contains(['[', ']']) {
                report.contextual_with_brackets += 1;
            }
            continue;
        }
        let Ok((_, spans)) = parse_brackets(&e.text) else {
            report.malformed += 1;
            continue;
        };
        let split = splits.get(&e.image_id);
        let canon = |list: &[String]| list.iter().map(|o| canonicalize(o, &s)).collect::<BTreeSet<_>>();
        let omitted = split.map(|sp| canon(&sp.omitted)).unwrap_or_default();
        let grounded = split.map(|sp| canon(&sp.grounded)).unwrap_or_default();
        for span in spans {
            let c = canonicalize(&span.inner, &s);
            if grounded.contains(&c) {
                report.brackets_on_grounded += 1;
            } else if !omitted.contains(&c) {
                report.brackets_on_unknown += 1;
            }
        }
    }
    report
}
