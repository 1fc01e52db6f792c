use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bracket-indicated region, with char offsets into the cleaned text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatedSpan {
    pub start: usize,
    pub end: usize,
    pub inner: String,
}

impl IndicatedSpan {
    pub fn contains(&self, start: usize, end: usize) -> bool {
        self.start <= start && end <= self.end
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        start < self.end && self.start < end
    }
}

/// Strips `[x]` markers, returning the clean text and where each marked
/// region ended up. Nested, unclosed or stray brackets are rejected.
pub fn parse_brackets(text: &str) -> Result<(String, Vec<IndicatedSpan>)> {
    let mut clean = String::with_capacity(text.len());
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    let mut out_pos = 0usize;
    let mut inner = String::new();

    for (pos, c) in text.chars().enumerate() {
        match c {
            '[' => {
                if open.is_some() {
                    return Err(Error::MalformedBrackets { position: pos, reason: "nested bracket" });
                }
                open = Some((pos, out_pos));
                inner.clear();
            }
            ']' => {
                let Some((_, start)) = open.take() else {
                    return Err(Error::MalformedBrackets {
                        position: pos,
                        reason: "closing bracket without opening",
                    });
                };
                spans.push(IndicatedSpan { start, end: out_pos, inner: std::mem::take(&mut inner) });
            }
            _ => {
                clean.push(c);
                out_pos += 1;
                if open.is_some() {
                    inner.push(c);
                }
            }
        }
    }
    if let Some((pos, _)) = open {
        return Err(Error::MalformedBrackets { position: pos, reason: "unclosed bracket" });
    }
    Ok((clean, spans))
}

/// Removes every bracket char without validating structure.
pub fn strip_brackets(text: &str) -> String {
    text.chars().filter(|c| !matches!(c, '[' | ']')).collect()
}
