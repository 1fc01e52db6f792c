use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::extraction::normalize::{canonicalize, Singularizer};

pub const DEFAULT_SYNONYMS: &str = include_str!("../../assets/synonyms.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    #[serde(default = "yes")]
    head_noun_rule: bool,
    #[serde(default)]
    head_stoplist: Vec<String>,
    #[serde(default)]
    equivalence_groups: Vec<Vec<String>>,
    #[serde(default)]
    negative_pairs: Vec<[String; 2]>,
    #[serde(default)]
    meronym_groups: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    kinds: BTreeMap<String, Vec<String>>,
}

fn yes() -> bool {
    true
}

/// Term relations used by the lexicon matcher.
///
/// Two terms are related when they are equal, share an equivalence group, or
/// one is a (transitive) kind of the other. With the head-noun rule on, a
/// phrase is also represented by its head noun, so "city street" relates to
/// "street". Negative pairs veto a match outright.
#[derive(Debug, Clone)]
pub struct SynonymTable {
    pub head_noun_rule: bool,
    head_stoplist: BTreeSet<String>,
    groups: Vec<Vec<String>>,
    group_of: HashMap<String, usize>,
    negative: BTreeSet<(String, String)>,
    negative_terms: BTreeSet<String>,
    meronyms: BTreeMap<String, Vec<String>>,
    hyponyms: HashMap<String, BTreeSet<String>>,
    singularizer: Singularizer,
}

impl Default for SynonymTable {
    fn default() -> Self {
        Self::parse(DEFAULT_SYNONYMS).expect("bundled synonym table is valid")
    }
}

impl SynonymTable {
    /// A table with no relations: only equal canonical forms (and heads,
    /// when `head_noun_rule` is set) match.
    pub fn empty(head_noun_rule: bool) -> Self {
        Self {
            head_noun_rule,
            head_stoplist: BTreeSet::new(),
            groups: Vec::new(),
            group_of: HashMap::new(),
            negative: BTreeSet::new(),
            negative_terms: BTreeSet::new(),
            meronyms: BTreeMap::new(),
            hyponyms: HashMap::new(),
            singularizer: Singularizer::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawTable = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("synonym table: {e}")))?;
        let mut t = Self::empty(raw.head_noun_rule);
        let canon = |s: &str| -> Result<String> {
            let c = canonicalize(s, &t.singularizer);
            if c.is_empty() {
                return Err(Error::InvalidConfig(format!("synonym table term {s:?} is empty")));
            }
            Ok(c)
        };

        t.head_stoplist = raw.head_stoplist.iter().map(|w| canon(w)).collect::<Result<_>>()?;

        let mut groups = Vec::new();
        let mut group_of = HashMap::new();
        for g in &raw.equivalence_groups {
            let mut members: Vec<String> = Vec::new();
            for term in g {
                let c = canon(term)?;
                if !members.contains(&c) {
                    members.push(c);
                }
            }
            let idx = groups.len();
            for m in &members {
                if group_of.insert(m.clone(), idx).is_some() {
                    return Err(Error::InvalidConfig(format!(
                        "synonym term {m:?} appears in two equivalence groups"
                    )));
                }
            }
            groups.push(members);
        }
        t.groups = groups;
        t.group_of = group_of;

        for [a, b] in &raw.negative_pairs {
            let (a, b) = (canon(a)?, canon(b)?);
            if a == b {
                return Err(Error::InvalidConfig(format!("negative pair relates {a:?} to itself")));
            }
            t.negative_terms.insert(a.clone());
            t.negative_terms.insert(b.clone());
            t.negative.insert(ordered(a, b));
        }

        for (whole, parts) in &raw.meronym_groups {
            let parts = parts.iter().map(|p| canon(p)).collect::<Result<Vec<_>>>()?;
            if parts.is_empty() {
                return Err(Error::InvalidConfig(format!("meronym group {whole:?} has no parts")));
            }
            t.meronyms.insert(canon(whole)?, parts);
        }

        let mut direct: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (hyper, hypos) in &raw.kinds {
            let h = t.rep(&canon(hyper)?).to_owned();
            for hypo in hypos {
                let r = t.rep(&canon(hypo)?).to_owned();
                if r != h {
                    direct.entry(h.clone()).or_default().insert(r);
                }
            }
        }
        t.hyponyms = transitive_closure(&direct);
        Ok(t)
    }

    pub fn singularizer(&self) -> &Singularizer {
        &self.singularizer
    }

    pub fn canonical(&self, term: &str) -> String {
        canonicalize(term, &self.singularizer)
    }

    /// Group representative, or the term itself when ungrouped.
    fn rep<'a>(&'a self, term: &'a str) -> &'a str {
        match self.group_of.get(term) {
            Some(&g) => &self.groups[g][0],
            None => term,
        }
    }

    /// Equal, synonymous, or hypernym/hyponym of each other.
    pub fn related(&self, a: &str, b: &str) -> bool {
        let (ra, rb) = (self.rep(a), self.rep(b));
        ra == rb
            || self.hyponyms.get(ra).is_some_and(|s| s.contains(rb))
            || self.hyponyms.get(rb).is_some_and(|s| s.contains(ra))
    }

    /// The phrase itself, its "X of Y" reduction when X is a stop head, and
    /// its head noun. Only the phrase itself when the head rule is off.
    pub fn forms(&self, canonical: &str) -> Vec<String> {
        let mut out = vec![canonical.to_owned()];
        if !self.head_noun_rule {
            return out;
        }
        let mut words: Vec<&str> = canonical.split(' ').filter(|w| !w.is_empty()).collect();
        while let Some(of) = words.iter().position(|w| *w == "of").filter(|&i| i > 0) {
            let left_head = self.head_word(&words[..of]);
            if self.head_stoplist.contains(left_head) && of + 1 < words.len() {
                words.drain(..=of);
                push_unique(&mut out, words.join(" "));
            } else {
                push_unique(&mut out, left_head.to_owned());
                return out;
            }
        }
        let head = self.head_word(&words).to_owned();
        push_unique(&mut out, head);
        out
    }

    fn head_word<'a>(&self, words: &[&'a str]) -> &'a str {
        words
            .iter()
            .rev()
            .find(|w| !self.head_stoplist.contains(**w))
            .or(words.last())
            .copied()
            .unwrap_or("")
    }

    /// Longest negative-pair term that `canonical` ends with, word-aligned.
    fn negative_anchor<'a>(&'a self, canonical: &'a str) -> Option<&'a str> {
        if self.negative_terms.is_empty() {
            return None;
        }
        let words: Vec<&str> = canonical.split(' ').collect();
        (0..words.len()).find_map(|i| {
            let suffix = words[i..].join(" ");
            self.negative_terms.get(&suffix).map(String::as_str)
        })
    }

    pub fn is_negative(&self, a: &str, b: &str) -> bool {
        match (self.negative_anchor(a), self.negative_anchor(b)) {
            (Some(x), Some(y)) if x != y => self.negative.contains(&ordered(x.to_owned(), y.to_owned())),
            _ => false,
        }
    }

    /// One term against another: not vetoed, and some form of each related.
    pub fn pair_matches(&self, a: &str, b: &str) -> bool {
        if self.is_negative(a, b) {
            return false;
        }
        let fb = self.forms(b);
        self.forms(a).iter().any(|x| fb.iter().any(|y| self.related(x, y)))
    }

    /// Whether `term` is matched by anything in `universe`, either directly
    /// or as a whole all of whose parts are matched.
    pub fn matched_by(&self, term: &str, universe: &[String]) -> bool {
        if universe.iter().any(|u| self.pair_matches(term, u)) {
            return true;
        }
        self.forms(term).iter().any(|f| {
            self.meronyms
                .get(f)
                .or_else(|| self.meronyms.get(self.rep(f)))
                .is_some_and(|parts| parts.iter().all(|p| universe.iter().any(|u| self.pair_matches(p, u))))
        })
    }
}

fn ordered(a: String, b: String) -> (String, String) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn push_unique(v: &mut Vec<String>, s: String) {
    if !s.is_empty() && !v.contains(&s) {
        v.push(s);
    }
}

fn transitive_closure(direct: &HashMap<String, BTreeSet<String>>) -> HashMap<String, BTreeSet<String>> {
    let mut out = HashMap::new();
    for root in direct.keys() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&String> = direct[root].iter().collect();
        while let Some(n) = stack.pop() {
            if n != root && seen.insert(n.clone()) {
                if let Some(next) = direct.get(n) {
                    stack.extend(next.iter());
                }
            }
        }
        out.insert(root.clone(), seen);
    }
    out
}
