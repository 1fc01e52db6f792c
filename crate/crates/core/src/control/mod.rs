//! A bigram softmax language model with an epsilon-controlled output layer.
//!
//! The logits after previous token `p` are `c_pᵀ(E + εWE)`: every output
//! embedding `e_v` becomes `e_v + εWe_v`. `E` and the context table `C` are
//! learned first with `W = 0`; afterwards only `W` is trained, on records
//! labelled ε = -1 (contextual) and ε = +1 (joint, with indication tokens).

mod bound;
mod checkpoint;
mod train;

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bound::{verify_bound, BoundPoint, BoundReport, DEFAULT_ENUMERATION_CAP};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use train::{
    base_loss, control_grad, control_loss, train_base, train_control, BigramCounts, LabeledCounts, TrainConfig,
    TrainLog,
};

use crate::error::{Error, Result};

pub const OPEN: &str = "[";
pub const CLOSE: &str = "]";
pub const END: &str = "</s>";

/// Lowercased words, with `.`, `,`, `[` and `]` as separate tokens. Other
/// punctuation is dropped.
pub fn tokenize_toy(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |w: &mut String, out: &mut Vec<String>| {
        if !w.is_empty() {
            out.push(std::mem::take(w));
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() || ((c == '\'' || c == '-') && !word.is_empty()) {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut out);
            if matches!(c, '.' | ',' | '[' | ']') {
                out.push(c.to_string());
            }
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Joins tokens into text, dropping the end token.
pub fn render_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue = true;
    for t in tokens.iter().map(AsRef::as_ref) {
        if t == END {
            break;
        }
        let attach = matches!(t, "]" | "." | ",");
        if !out.is_empty() && !glue && !attach {
            out.push(' ');
        }
        out.push_str(t);
        glue = t == OPEN;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Sorted corpus tokens followed by `[`, `]` and the end token.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let specials = [OPEN, CLOSE, END];
        let words: BTreeSet<String> = texts
            .iter()
            .flat_map(|t| tokenize_toy(t.as_ref()))
            .filter(|t| !specials.contains(&t.as_str()))
            .collect();
        let mut tokens: Vec<String> = words.into_iter().collect();
        tokens.extend(specials.iter().map(|s| (*s).to_owned()));
        Self::from_tokens(tokens).expect("specials are unique")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        for s in [OPEN, CLOSE, END] {
            if !index.contains_key(s) {
                return Err(Error::InvalidInput(format!("vocabulary lacks {s:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn end(&self) -> usize {
        self.index[END]
    }

    /// Token ids of `text` followed by the end token.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = tokenize_toy(text)
            .iter()
            .map(|t| self.id(t).ok_or_else(|| Error::InvalidInput(format!("token {t:?} is not in the vocabulary"))))
            .collect::<Result<Vec<_>>>()?;
        ids.push(self.end());
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `E` is d × |V| (one column per output token), `C` is d × (|V| + 1) (one
/// column per previous token plus a start column), `W` is d × d.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledLM {
    vocab: Vocab,
    e: DMatrix<f64>,
    c: DMatrix<f64>,
    w: DMatrix<f64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl ControlledLM {
    /// Random `E` and `C` with entries uniform in ±1/√d, and `W = 0`.
    pub fn new_random(vocab: Vocab, dim: usize, seed: u64) -> Result<Self> {
        if vocab.len() < 4 || dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "model needs at least 4 tokens and dimension 2 (got {} and {dim})",
                vocab.len()
            )));
        }
        let v = vocab.len();
        let scale = 1.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-scale, scale).expect("finite range");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = DMatrix::from_fn(dim, v, |_, _| dist.sample(&mut rng));
        let c = DMatrix::from_fn(dim, v + 1, |_, _| dist.sample(&mut rng));
        Ok(Self { vocab, e, c, w: DMatrix::zeros(dim, dim), epsilon: 0.0, seed })
    }

    pub fn from_parts(vocab: Vocab, e: DMatrix<f64>, c: DMatrix<f64>, w: DMatrix<f64>, seed: u64) -> Result<Self> {
        let (d, v) = (e.nrows(), vocab.len());
        if e.ncols() != v || c.nrows() != d || c.ncols() != v + 1 || w.nrows() != d || w.ncols() != d {
            return Err(Error::InvalidInput("model matrix shapes do not agree".into()));
        }
        if v < 4 || d < 2 {
            return Err(Error::InvalidInput("model needs at least 4 tokens and dimension 2".into()));
        }
        if !(e.iter().chain(c.iter()).chain(w.iter()).all(|x| x.is_finite())) {
            return Err(Error::InvalidInput("model parameters must be finite".into()));
        }
        Ok(Self { vocab, e, c, w, epsilon: 0.0, seed })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn set_w(&mut self, w: DMatrix<f64>) -> Result<()> {
        if w.shape() != (self.dim(), self.dim()) || !w.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("control matrix must be finite and d × d".into()));
        }
        self.w = w;
        Ok(())
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut DMatrix<f64>, &mut DMatrix<f64>, &mut DMatrix<f64>) {
        (&mut self.e, &mut self.c, &mut self.w)
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        check_epsilon(epsilon)?;
        self.epsilon = epsilon;
        Ok(())
    }

    /// Column of `C` for a previous token, or the start column.
    pub fn context_index(&self, prev: Option<usize>) -> usize {
        prev.unwrap_or(self.vocab.len())
    }

    /// `c + εWᵀc`, the context vector the output embeddings are scored
    /// against.
    pub(crate) fn steered_context(&self, ctx: usize, epsilon: f64) -> Vec<f64> {
        let d = self.dim();
        let c = &self.c.as_slice()[ctx * d..(ctx + 1) * d];
        let w = self.w.as_slice();
        (0..d)
            .map(|j| {
                let wtc: f64 = w[j * d..(j + 1) * d].iter().zip(c).map(|(a, b)| a * b).sum();
                c[j] + epsilon * wtc
            })
            .collect()
    }

    pub(crate) fn logits_for(&self, ctx: usize, epsilon: f64) -> Vec<f64> {
        let u = self.steered_context(ctx, epsilon);
        let d = self.dim();
        self.e.as_slice().chunks_exact(d).map(|col| col.iter().zip(&u).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn logits(&self, prev: Option<usize>, epsilon: f64) -> Vec<f64> {
        self.logits_for(self.context_index(prev), epsilon)
    }

    pub fn next_token_dist(&self, prev: Option<usize>, epsilon: f64) -> Vec<f64> {
        softmax(&self.logits(prev, epsilon))
    }

    /// Log probability of `tokens` under the chain rule, starting from the
    /// start context.
    pub fn sequence_logprob(&self, tokens: &[usize], epsilon: f64) -> f64 {
        let mut prev = None;
        let mut total = 0.0;
        for &t in tokens {
            total += self.next_token_dist(prev, epsilon)[t].ln();
            prev = Some(t);
        }
        total
    }

    /// Ancestral sampling until the end token or `max_len` tokens. The end
    /// token is kept when sampled.
    pub fn generate(&self, epsilon: f64, max_len: usize, seed: u64) -> Result<Vec<usize>> {
        check_epsilon(epsilon)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let end = self.vocab.end();
        let mut out = Vec::new();
        let mut prev = None;
        while out.len() < max_len {
            let t = sample(&self.next_token_dist(prev, epsilon), &mut rng);
            out.push(t);
            if t == end {
                break;
            }
            prev = Some(t);
        }
        Ok(out)
    }

    pub fn generate_text(&self, epsilon: f64, max_len: usize, seed: u64) -> Result<String> {
        Ok(render_tokens(&self.vocab.decode(&self.generate(epsilon, max_len, seed)?)))
    }
}

/// Seed for the `index`-th sample of a run seeded with `run_seed`.
pub fn sample_seed(run_seed: u64, index: u64) -> u64 {
    run_seed.wrapping_mul(1_000_003).wrapping_add(index)
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!("epsilon must lie in [-1, 1], got {epsilon}")));
    }
    Ok(())
}

fn sample(p: &[f64], rng: &mut impl Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if r < acc {
            return i;
        }
    }
    p.len() - 1
}
