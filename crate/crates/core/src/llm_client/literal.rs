//! Python-style list literals, the answer format of all three prompts
//! (`objects = ['sink', 'mirror']`).

use crate::error::{Error, Result};

/// Parses the last quoted list literal in `text`.
///
/// Earlier literals are ignored because models tend to echo the prompt's
/// worked examples before answering.
pub fn parse_list_literal(text: &str) -> Result<Vec<String>> {
    let chars: Vec<char> = text.chars().collect();
    let mut last = None;
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '[' {
            if let Some((items, end)) = parse_at(&chars, i) {
                last = Some(items);
                i = end;
                continue;
            }
        }
        i += 1;
    }
    last.ok_or_else(|| Error::UnparsableOutput { snippet: text.chars().take(120).collect() })
}

fn skip_ws(chars: &[char], mut i: usize) -> usize {
    while i < chars.len() && chars[i].is_whitespace() {
        i += 1;
    }
    i
}

/// Parses a literal whose `[` is at `open`; returns the items and the index
/// one past the closing `]`.
fn parse_at(chars: &[char], open: usize) -> Option<(Vec<String>, usize)> {
    let mut items = Vec::new();
    let mut i = skip_ws(chars, open + 1);
    if chars.get(i) == Some(&']') {
        return Some((items, i + 1));
    }
    loop {
        let quote = *chars.get(i)?;
        if quote != '\'' && quote != '"' {
            return None;
        }
        i += 1;
        let mut item = String::new();
        loop {
            let c = *chars.get(i)?;
            i += 1;
            if c == quote {
                break;
            }
            if c == '\\' {
                let esc = *chars.get(i)?;
                i += 1;
                item.push(match esc {
                    'n' => '\n',
                    't' => '\t',
                    other => other,
                });
            } else {
                item.push(c);
            }
        }
        items.push(item.trim().to_owned());
        i = skip_ws(chars, i);
        match chars.get(i)? {
            ']' => return Some((items, i + 1)),
            ',' => {
                i = skip_ws(chars, i + 1);
                if chars.get(i) == Some(&']') {
                    return Some((items, i + 1));
                }
            }
            _ => return None,
        }
    }
}

/// Renders items the way Python's `repr` prints a list of strings.
pub fn render_list_literal<S: AsRef<str>>(items: &[S]) -> String {
    let rendered: Vec<String> = items.iter().map(|s| render_item(s.as_ref())).collect();
    format!("[{}]", rendered.join(", "))
}

fn render_item(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}
