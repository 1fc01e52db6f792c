//! Case folding, word tokenization, quantifier stripping and singularization.
//!
//! Everything here is char-aligned: folding maps each `char` to exactly one
//! `char`, so offsets computed on folded text are valid on the original.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Simple (one-to-one) lowercase mapping of a single char.
pub fn fold_char(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

pub fn fold(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

/// A word token with char offsets into the text it was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Folded form with any trailing possessive `'s` removed.
    pub word: String,
    pub start: usize,
    pub end: usize,
    pub sentence: usize,
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits `text` into word tokens. Apostrophes and hyphens are kept when they
/// sit between two alphanumeric chars ("well-equipped", "man's").
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut sentence = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() {
            let start = i;
            let mut j = i + 1;
            while j < chars.len() {
                let d = chars[j];
                if d.is_alphanumeric() {
                    j += 1;
                } else if matches!(d, '\'' | '-' | '\u{2019}')
                    && j + 1 < chars.len()
                    && chars[j + 1].is_alphanumeric()
                {
                    j += 2;
                } else {
                    break;
                }
            }
            let mut word: String = chars[start..j].iter().map(|&c| fold_char(c)).collect();
            for poss in ["'s", "\u{2019}s"] {
                if word.len() > poss.len() + 1 && word.ends_with(poss) {
                    word.truncate(word.len() - poss.len());
                }
            }
            tokens.push(Token { word, start, end: j, sentence });
            i = j;
        } else {
            // "3.5" stays inside one sentence; a period between letters does not.
            if is_sentence_end(c) {
                let numeric = i > 0
                    && i + 1 < chars.len()
                    && chars[i - 1].is_ascii_digit()
                    && chars[i + 1].is_ascii_digit();
                if !numeric {
                    sentence += 1;
                }
            }
            i += 1;
        }
    }
    // Renumber so that sentence ids are dense over sentences that hold tokens.
    let mut dense = BTreeMap::new();
    for t in &mut tokens {
        let next = dense.len();
        t.sentence = *dense.entry(t.sentence).or_insert(next);
    }
    tokens
}

/// Number of sentences in `text` that contain at least one word.
pub fn sentence_count(text: &str) -> usize {
    tokenize(text).last().map_or(0, |t| t.sentence + 1)
}

/// Whitespace-token count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub const DEFAULT_QUANTIFIERS: &[&str] = &[
    "a", "an", "the", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "ten", "several", "multiple", "few", "many",
];

pub fn is_quantifier(word: &str) -> bool {
    DEFAULT_QUANTIFIERS.contains(&word) || word.chars().all(|c| c.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixRule {
    pub suffix: String,
    pub replacement: String,
    /// The rule is skipped for words ending in any of these.
    #[serde(default)]
    pub unless: Vec<String>,
}

impl SuffixRule {
    fn new(suffix: &str, replacement: &str, unless: &[&str]) -> Self {
        Self {
            suffix: suffix.to_owned(),
            replacement: replacement.to_owned(),
            unless: unless.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

/// Ordered suffix-rewrite singularizer with an irregular table and a list of
/// words that are left untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Singularizer {
    pub irregular: BTreeMap<String, String>,
    pub invariant: BTreeSet<String>,
    pub rules: Vec<SuffixRule>,
}

const IRREGULAR: &[(&str, &str)] = &[
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("oxen", "ox"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("lives", "life"),
    ("gloves", "glove"),
    ("stoves", "stove"),
    ("olives", "olive"),
    ("doves", "dove"),
    ("valves", "valve"),
    ("waves", "wave"),
    ("sleeves", "sleeve"),
    ("curves", "curve"),
    ("groves", "grove"),
    ("cloves", "clove"),
    ("shoes", "shoe"),
    ("toes", "toe"),
    ("canoes", "canoe"),
    ("ties", "tie"),
    ("pies", "pie"),
    ("movies", "movie"),
    ("cookies", "cookie"),
    ("buses", "bus"),
    ("lenses", "lens"),
    ("cacti", "cactus"),
];

const INVARIANT: &[&str] = &[
    "bus", "gas", "lens", "grass", "glass", "dress", "mattress", "canvas", "compass", "cactus",
    "pants", "clothes", "jeans", "shorts", "trousers", "scissors", "tongs", "news", "series", "species",
    "sheep", "fish", "deer", "aircraft", "tennis", "chess", "bus", "its", "this", "is", "was",
    "has", "as", "us", "yes",
];

impl Default for Singularizer {
    fn default() -> Self {
        let rules = vec![
            SuffixRule::new("ies", "y", &["eies", "aies", "oies"]),
            SuffixRule::new("ves", "f", &[]),
            SuffixRule::new("sses", "ss", &[]),
            SuffixRule::new("shes", "sh", &[]),
            SuffixRule::new("ches", "ch", &[]),
            SuffixRule::new("xes", "x", &[]),
            SuffixRule::new("zzes", "zz", &[]),
            SuffixRule::new("oes", "o", &[]),
            SuffixRule::new("s", "", &["ss", "us", "is", "'s"]),
        ];
        Self {
            irregular: IRREGULAR
                .iter()
                .map(|(p, s)| ((*p).to_owned(), (*s).to_owned()))
                .collect(),
            invariant: INVARIANT.iter().map(|s| (*s).to_owned()).collect(),
            rules,
        }
    }
}

impl Singularizer {
    pub fn singular(&self, word: &str) -> String {
        if let Some(s) = self.irregular.get(word) {
            return s.clone();
        }
        if self.invariant.contains(word) || word.chars().count() < 3 {
            return word.to_owned();
        }
        // Hyphenated compounds inflect on the last segment.
        if let Some((head, tail)) = word.rsplit_once('-') {
            if !tail.is_empty() {
                return format!("{head}-{}", self.singular(tail));
            }
        }
        for rule in &self.rules {
            if word.len() > rule.suffix.len()
                && word.ends_with(&rule.suffix)
                && !rule.unless.iter().any(|u| word.ends_with(u.as_str()))
            {
                let stem = &word[..word.len() - rule.suffix.len()];
                return format!("{stem}{}", rule.replacement);
            }
        }
        word.to_owned()
    }
}

/// Turns a free-form object phrase into its canonical form: folded, leading
/// quantifiers removed, and the head word(s) singularized. The head of a
/// phrase is its last word, and in "X of Y" also the last word of X.
pub fn canonicalize(phrase: &str, singularizer: &Singularizer) -> String {
    let words: Vec<String> = tokenize(phrase).into_iter().map(|t| t.word).collect();
    canonicalize_words(&words, singularizer)
}

pub(crate) fn canonicalize_words(words: &[String], singularizer: &Singularizer) -> String {
    let start = words.iter().take_while(|w| is_quantifier(w)).count();
    let words = &words[start..];
    let mut out = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let is_head = i + 1 == words.len() || words[i + 1] == "of";
        if is_head && w != "of" {
            out.push(singularizer.singular(w));
        } else {
            out.push(w.clone());
        }
    }
    out.join(" ")
}
