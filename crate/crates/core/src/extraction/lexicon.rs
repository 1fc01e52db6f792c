//! Deterministic lexicon-driven object extraction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::brackets::IndicatedSpan;
use super::normalize::{canonicalize_words, fold, is_quantifier, tokenize, Singularizer, Token};
use super::{Caption, ObjectMention, Span};
use crate::error::{Error, Result};

const DEFAULT_OBJECTS: &str = include_str!("../../assets/lexicon/objects.txt");
const DEFAULT_PLACES: &str = include_str!("../../assets/lexicon/places.txt");
const DEFAULT_POSITIONS: &str = include_str!("../../assets/lexicon/positions.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TermKind {
    Object,
    Stop,
}

/// Object names plus the scene and position terms that must never be
/// reported as objects.
#[derive(Debug, Clone)]
pub struct ObjectLexicon {
    object_terms: BTreeSet<String>,
    place_stoplist: BTreeSet<String>,
    position_stoplist: BTreeSet<String>,
    /// term -> index of its duplicate group
    duplicate_of: BTreeMap<String, usize>,
    containers: BTreeSet<String>,
    singularizer: Singularizer,
    max_words: usize,
}

fn normalize_term(raw: &str) -> String {
    fold(raw.trim()).split_whitespace().collect::<Vec<_>>().join(" ")
}

fn stoplist_lines(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_term)
}

impl ObjectLexicon {
    /// Builds a lexicon from explicit term lists with the default singularizer.
    pub fn from_terms<I, J, K, S1, S2, S3>(objects: I, places: J, positions: K) -> Result<Self>
    where
        I: IntoIterator<Item = S1>,
        J: IntoIterator<Item = S2>,
        K: IntoIterator<Item = S3>,
        S1: AsRef<str>,
        S2: AsRef<str>,
        S3: AsRef<str>,
    {
        let mut lex = Self::empty();
        for o in objects {
            lex.object_terms.insert(normalize_term(o.as_ref()));
        }
        lex.place_stoplist = places.into_iter().map(|t| normalize_term(t.as_ref())).collect();
        lex.position_stoplist = positions.into_iter().map(|t| normalize_term(t.as_ref())).collect();
        lex.finish()
    }

    fn empty() -> Self {
        Self {
            object_terms: BTreeSet::new(),
            place_stoplist: BTreeSet::new(),
            position_stoplist: BTreeSet::new(),
            duplicate_of: BTreeMap::new(),
            containers: BTreeSet::new(),
            singularizer: Singularizer::default(),
            max_words: 0,
        }
    }

    /// Parses the three plain-text lexicon files (see `assets/lexicon/objects.txt`
    /// for the object-file grammar).
    pub fn parse(objects: &str, places: &str, positions: &str) -> Result<Self> {
        let mut lex = Self::empty();
        let mut groups = 0usize;
        for line in objects.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("container:") {
                let term = normalize_term(rest);
                lex.containers.insert(term.clone());
                lex.object_terms.insert(term);
            } else if line.contains('|') {
                for member in line.split('|').map(normalize_term).filter(|t| !t.is_empty()) {
                    if lex.duplicate_of.insert(member.clone(), groups).is_some() {
                        return Err(Error::InvalidConfig(format!(
                            "lexicon term {member:?} is in two duplicate groups"
                        )));
                    }
                    lex.object_terms.insert(member);
                }
                groups += 1;
            } else {
                lex.object_terms.insert(normalize_term(line));
            }
        }
        lex.place_stoplist = stoplist_lines(places).collect();
        lex.position_stoplist = stoplist_lines(positions).collect();
        lex.finish()
    }

    pub fn load(objects: &Path, places: &Path, positions: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Self::parse(&read(objects)?, &read(places)?, &read(positions)?)
    }

    /// Loads `objects.txt`, `places.txt` and `positions.txt` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join("objects.txt"), &dir.join("places.txt"), &dir.join("positions.txt"))
    }

    /// The lexicon shipped with the crate.
    pub fn default_english() -> Self {
        Self::parse(DEFAULT_OBJECTS, DEFAULT_PLACES, DEFAULT_POSITIONS)
            .expect("bundled lexicon is valid")
    }

    fn finish(mut self) -> Result<Self> {
        self.object_terms.remove("");
        self.place_stoplist.remove("");
        self.position_stoplist.remove("");
        if let Some(t) = self.object_terms.intersection(&self.place_stoplist).next() {
            return Err(Error::InvalidConfig(format!(
                "{t:?} is both an object term and a place term"
            )));
        }
        if let Some(t) = self.object_terms.intersection(&self.position_stoplist).next() {
            return Err(Error::InvalidConfig(format!(
                "{t:?} is both an object term and a position term"
            )));
        }
        self.max_words = self
            .object_terms
            .iter()
            .chain(&self.place_stoplist)
            .chain(&self.position_stoplist)
            .map(|t| t.split(' ').count())
            .max()
            .unwrap_or(0);
        Ok(self)
    }

    pub fn object_terms(&self) -> &BTreeSet<String> {
        &self.object_terms
    }

    pub fn place_stoplist(&self) -> &BTreeSet<String> {
        &self.place_stoplist
    }

    pub fn position_stoplist(&self) -> &BTreeSet<String> {
        &self.position_stoplist
    }

    pub fn singularizer(&self) -> &Singularizer {
        &self.singularizer
    }

    pub fn is_stop(&self, term: &str) -> bool {
        self.place_stoplist.contains(term) || self.position_stoplist.contains(term)
    }

    fn classify(&self, key: &str) -> Option<TermKind> {
        if self.object_terms.contains(key) {
            Some(TermKind::Object)
        } else if self.is_stop(key) {
            Some(TermKind::Stop)
        } else {
            None
        }
    }

    /// Looks a word sequence up verbatim, then with its last word singularized.
    fn lookup(&self, words: &[&str]) -> Option<(TermKind, String)> {
        let raw = words.join(" ");
        if let Some(kind) = self.classify(&raw) {
            return Some((kind, raw));
        }
        let last = words.last()?;
        let single = self.singularizer.singular(last);
        if single != *last {
            let mut key = words[..words.len() - 1].join(" ");
            if !key.is_empty() {
                key.push(' ');
            }
            key.push_str(&single);
            if let Some(kind) = self.classify(&key) {
                return Some((kind, key));
            }
        }
        None
    }

    /// Longest term starting at `tokens[i]` that stays inside one sentence.
    fn longest_at(&self, tokens: &[Token], i: usize) -> Option<(usize, TermKind, String)> {
        if is_quantifier(&tokens[i].word) {
            return None;
        }
        let sentence = tokens[i].sentence;
        let avail = tokens[i..].iter().take_while(|t| t.sentence == sentence).count();
        for n in (1..=self.max_words.min(avail)).rev() {
            let words: Vec<&str> = tokens[i..i + n].iter().map(|t| t.word.as_str()).collect();
            if let Some((kind, key)) = self.lookup(&words) {
                return Some((n, kind, key));
            }
        }
        None
    }

    /// Scans tokens left to right, returning `(canonical, first token, token count)`
    /// for every object occurrence.
    fn scan(&self, tokens: &[Token]) -> Vec<(String, usize, usize)> {
        let mut found = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let Some((n, kind, key)) = self.longest_at(tokens, i) else {
                i += 1;
                continue;
            };
            if kind == TermKind::Object {
                // "bottle of water" reports the contents, not the container.
                let of = i + n;
                let partitive = self.containers.contains(&key)
                    && tokens.get(of).is_some_and(|t| t.word == "of" && t.sentence == tokens[i].sentence)
                    && of + 1 < tokens.len()
                    && matches!(self.longest_at(tokens, of + 1), Some((_, TermKind::Object, _)));
                if partitive {
                    i = of + 1;
                    continue;
                }
                found.push((key, i, n));
            }
            i += n;
        }
        found
    }

    /// Canonical form of free text inside brackets when it holds no lexicon term.
    fn fallback_canonical(&self, inner: &str) -> Option<String> {
        let words: Vec<String> = tokenize(inner)
            .into_iter()
            .map(|t| t.word)
            .filter(|w| !self.is_stop(w))
            .collect();
        let canon = canonicalize_words(&words, &self.singularizer);
        (!canon.is_empty() && !self.is_stop(&canon)).then_some(canon)
    }

    fn group_key(&self, canonical: &str) -> String {
        match self.duplicate_of.get(canonical) {
            Some(g) => format!("\u{0}group{g}"),
            None => canonical.to_owned(),
        }
    }
}

struct Occurrence {
    canonical: String,
    surface: String,
    span: Span,
    sentence: usize,
    indicated: bool,
}

/// Extracts de-duplicated object mentions from a caption using `lexicon`.
///
/// Captions whose markup cannot be parsed are treated as carrying no
/// indication at all.
pub fn extract_lexicon(caption: &Caption, lexicon: &ObjectLexicon) -> Vec<ObjectMention> {
    let (clean, spans) = caption.clean_text_and_spans();
    extract_from_clean(&clean, &spans, lexicon)
}

pub(crate) fn extract_from_clean(
    clean: &str,
    spans: &[IndicatedSpan],
    lexicon: &ObjectLexicon,
) -> Vec<ObjectMention> {
    let chars: Vec<char> = clean.chars().collect();
    let tokens = tokenize(clean);
    let mut occurrences = Vec::new();
    let mut span_used = vec![false; spans.len()];

    for (canonical, first, n) in lexicon.scan(&tokens) {
        let start = tokens[first].start;
        let end = tokens[first + n - 1].end;
        let mut indicated = false;
        let mut rejected = false;
        for (k, s) in spans.iter().enumerate() {
            if s.contains(start, end) {
                indicated = true;
                span_used[k] = true;
            } else if s.overlaps(start, end) {
                rejected = true;
            }
        }
        if rejected {
            continue;
        }
        occurrences.push(Occurrence {
            canonical,
            surface: chars[start..end].iter().collect(),
            span: Span { start, end },
            sentence: tokens[first].sentence,
            indicated,
        });
    }

    for (k, s) in spans.iter().enumerate() {
        if span_used[k] || s.start == s.end {
            continue;
        }
        if let Some(canonical) = lexicon.fallback_canonical(&s.inner) {
            let sentence = tokens
                .iter()
                .find(|t| t.start >= s.start && t.end <= s.end)
                .map_or(0, |t| t.sentence);
            occurrences.push(Occurrence {
                canonical,
                surface: s.inner.clone(),
                span: Span { start: s.start, end: s.end },
                sentence,
                indicated: true,
            });
        }
    }
    occurrences.sort_by_key(|o| o.span.start);
    merge_occurrences(occurrences, |c| lexicon.group_key(c))
}

fn merge_occurrences(
    occurrences: Vec<Occurrence>,
    key_of: impl Fn(&str) -> String,
) -> Vec<ObjectMention> {
    let mut order: Vec<String> = Vec::new();
    let mut merged: BTreeMap<String, ObjectMention> = BTreeMap::new();
    for occ in occurrences {
        let key = key_of(&occ.canonical);
        match merged.get_mut(&key) {
            Some(m) => {
                m.indicated &= occ.indicated;
                if !m.sentences.contains(&occ.sentence) {
                    m.sentences.push(occ.sentence);
                }
            }
            None => {
                order.push(key.clone());
                merged.insert(
                    key,
                    ObjectMention {
                        surface: occ.surface,
                        canonical: occ.canonical,
                        indicated: occ.indicated,
                        span: Some(occ.span),
                        sentences: vec![occ.sentence],
                    },
                );
            }
        }
    }
    order.into_iter().filter_map(|k| merged.remove(&k)).collect()
}
