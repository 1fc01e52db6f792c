//! Object extraction from captions.
//!
//! Captions may carry indication markup: objects the captioner was unsure of
//! are wrapped in square brackets. Both extractors return one
//! [`ObjectMention`] per distinct canonical object, flagged `indicated` when
//! every occurrence of it was bracketed.

mod brackets;
mod lexicon;
pub mod normalize;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use brackets::{parse_brackets, strip_brackets, IndicatedSpan};
pub use lexicon::{extract_lexicon, ObjectLexicon};

use crate::error::{Error, Result};
use crate::llm_client::{parse_list_literal, LlmClient, TemplateId};
use normalize::{canonicalize, canonicalize_words, tokenize, Singularizer};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub id: String,
    pub image_id: String,
    pub text: String,
    /// Whether square brackets in `text` are indication markup.
    #[serde(default = "default_true")]
    pub indicated_markup: bool,
}

impl Caption {
    pub fn new(id: impl Into<String>, image_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), image_id: image_id.into(), text: text.into(), indicated_markup: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidInput(format!("caption {:?} has empty text", self.id)));
        }
        Ok(())
    }

    /// Text with markup removed, plus the indicated regions. Unparsable markup
    /// is stripped and treated as no indication.
    pub fn clean_text_and_spans(&self) -> (String, Vec<IndicatedSpan>) {
        if !self.indicated_markup {
            return (self.text.clone(), Vec::new());
        }
        match parse_brackets(&self.text) {
            Ok(parsed) => parsed,
            Err(_) => (strip_brackets(&self.text), Vec::new()),
        }
    }

    pub fn clean_text(&self) -> String {
        self.clean_text_and_spans().0
    }
}

/// Checks that caption ids are unique and texts non-empty.
pub fn validate_batch(captions: &[Caption]) -> Result<()> {
    let mut seen = HashSet::new();
    for c in captions {
        c.validate()?;
        if !seen.insert(c.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate caption id {:?}", c.id)));
        }
    }
    Ok(())
}

/// Char offsets into the cleaned caption text, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMention {
    pub surface: String,
    pub canonical: String,
    pub indicated: bool,
    /// Absent only when an LLM-reported object cannot be located in the text.
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    /// Sentence indices (within the caption) where the object occurs.
    #[serde(default)]
    pub sentences: Vec<usize>,
}

/// One line of the extraction output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub caption_id: String,
    pub mentions: Vec<ObjectMention>,
}

pub trait Extractor: Sync {
    fn extract(&self, caption: &Caption) -> Result<Vec<ObjectMention>>;
}

pub struct LexiconExtractor {
    pub lexicon: ObjectLexicon,
}

impl Extractor for LexiconExtractor {
    fn extract(&self, caption: &Caption) -> Result<Vec<ObjectMention>> {
        Ok(extract_lexicon(caption, &self.lexicon))
    }
}

pub struct LlmExtractor<'a> {
    pub client: &'a LlmClient,
    pub singularizer: Singularizer,
}

impl Extractor for LlmExtractor<'_> {
    fn extract(&self, caption: &Caption) -> Result<Vec<ObjectMention>> {
        extract_llm(caption, self.client, &self.singularizer)
    }
}

/// Renders a caption the way the extraction prompt's examples quote it.
pub fn quote_caption(text: &str) -> String {
    format!("\"{}\"", text.replace('\n', "\\n"))
}

/// Extracts objects by asking the LLM with the extraction prompt. Bracketed
/// objects are taken from local markup parsing, since the prompt tells the
/// model to ignore them. One retry is made when the answer has no list.
pub fn extract_llm(
    caption: &Caption,
    client: &LlmClient,
    singularizer: &Singularizer,
) -> Result<Vec<ObjectMention>> {
    let mut subs = BTreeMap::new();
    subs.insert("cap".to_owned(), quote_caption(&caption.text));
    let request = client.request(TemplateId::Extract, subs);
    let items = match parse_list_literal(&client.complete(&request)?) {
        Ok(items) => items,
        Err(Error::UnparsableOutput { .. }) => {
            parse_list_literal(&client.complete_uncached(&request)?)?
        }
        Err(e) => return Err(e),
    };

    let (clean, spans) = caption.clean_text_and_spans();
    let tokens = tokenize(&clean);
    let chars: Vec<char> = clean.chars().collect();

    let mut out: Vec<ObjectMention> = Vec::new();
    let mut indicated_canon = Vec::new();
    for s in &spans {
        let canonical = canonicalize(&s.inner, singularizer);
        if canonical.is_empty() || indicated_canon.contains(&canonical) {
            continue;
        }
        indicated_canon.push(canonical.clone());
        let sentence = tokens
            .iter()
            .find(|t| t.start >= s.start && t.end <= s.end)
            .map_or(0, |t| t.sentence);
        out.push(ObjectMention {
            surface: s.inner.clone(),
            canonical,
            indicated: true,
            span: Some(Span { start: s.start, end: s.end }),
            sentences: vec![sentence],
        });
    }

    for item in items {
        let canonical = canonicalize(&item, singularizer);
        if canonical.is_empty() || out.iter().any(|m| m.canonical == canonical) {
            continue;
        }
        let located = locate(&tokens, &canonical, singularizer, &spans);
        let (surface, span, sentences) = match located {
            Some((start, end, sentence)) => {
                (chars[start..end].iter().collect(), Some(Span { start, end }), vec![sentence])
            }
            None => (item.clone(), None, Vec::new()),
        };
        out.push(ObjectMention { surface, canonical, indicated: false, span, sentences });
    }
    out.sort_by_key(|m| m.span.map_or(usize::MAX, |s| s.start));
    Ok(out)
}

/// First un-bracketed token run whose canonical form equals `canonical`.
fn locate(
    tokens: &[normalize::Token],
    canonical: &str,
    singularizer: &Singularizer,
    spans: &[IndicatedSpan],
) -> Option<(usize, usize, usize)> {
    let n = canonical.split(' ').count();
    if n == 0 || n > tokens.len() {
        return None;
    }
    (0..=tokens.len() - n).find_map(|i| {
        let run = &tokens[i..i + n];
        let (start, end) = (run[0].start, run[n - 1].end);
        if spans.iter().any(|s| s.overlaps(start, end)) {
            return None;
        }
        let words: Vec<String> = run.iter().map(|t| t.word.clone()).collect();
        (canonicalize_words(&words, singularizer) == canonical).then_some((start, end, run[0].sentence))
    })
}
