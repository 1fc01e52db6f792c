use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, ControlledLM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sequences per step; 0 means the whole corpus.
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty on `W` (control training only).
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, epochs: 300, batch_size: 0, seed: 0, l2: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2 penalty must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}

/// Losses on the full training set: before the first epoch, then after
/// each one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

/// Next-token counts per context: row `ctx` (previous token, or the start
/// row `|V|`) holds counts of each following token.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramCounts {
    v: usize,
    counts: Vec<f64>,
    row_totals: Vec<f64>,
    total: f64,
}

impl BigramCounts {
    pub fn new(v: usize) -> Self {
        Self { v, counts: vec![0.0; (v + 1) * v], row_totals: vec![0.0; v + 1], total: 0.0 }
    }

    pub fn from_sequences<'a>(v: usize, seqs: impl IntoIterator<Item = &'a Vec<usize>>) -> Self {
        let mut c = Self::new(v);
        for s in seqs {
            c.add(s);
        }
        c
    }

    pub fn add(&mut self, seq: &[usize]) {
        let mut ctx = self.v;
        for &t in seq {
            self.counts[ctx * self.v + t] += 1.0;
            self.row_totals[ctx] += 1.0;
            self.total += 1.0;
            ctx = t;
        }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    fn row(&self, ctx: usize) -> &[f64] {
        &self.counts[ctx * self.v..(ctx + 1) * self.v]
    }

    fn distinct_tokens(&self, exclude: usize) -> usize {
        (0..self.v).filter(|&t| t != exclude && (0..=self.v).any(|c| self.counts[c * self.v + t] > 0.0)).count()
    }
}

/// Counts for the two control labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCounts {
    pub negative: BigramCounts,
    pub positive: BigramCounts,
}

impl LabeledCounts {
    pub fn from_labeled<'a>(v: usize, records: impl IntoIterator<Item = &'a (i8, Vec<usize>)>) -> Result<Self> {
        let mut negative = BigramCounts::new(v);
        let mut positive = BigramCounts::new(v);
        for (label, seq) in records {
            match label {
                -1 => negative.add(seq),
                1 => positive.add(seq),
                other => return Err(Error::InvalidInput(format!("epsilon label must be -1 or +1, got {other}"))),
            }
        }
        Ok(Self { negative, positive })
    }

    fn sides(&self) -> [(f64, &BigramCounts); 2] {
        [(-1.0, &self.negative), (1.0, &self.positive)]
    }

    fn total(&self) -> f64 {
        self.negative.total + self.positive.total
    }
}

fn log_softmax_at(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Sum of negative log-likelihoods under `counts` at control value `eps`.
fn nll(model: &ControlledLM, counts: &BigramCounts, eps: f64) -> f64 {
    let mut total = 0.0;
    for ctx in 0..=counts.v {
        if counts.row_totals[ctx] == 0.0 {
            continue;
        }
        let lp = log_softmax_at(&model.logits_for(ctx, eps));
        total -= counts.row(ctx).iter().zip(&lp).map(|(n, l)| n * l).sum::<f64>();
    }
    total
}

/// Mean per-token negative log-likelihood at ε = 0.
pub fn base_loss(model: &ControlledLM, counts: &BigramCounts) -> f64 {
    nll(model, counts, 0.0) / counts.total
}

/// Mean per-token negative log-likelihood, each record scored at its own
/// label, plus `l2/2 · ‖W‖²`.
pub fn control_loss(model: &ControlledLM, counts: &LabeledCounts, l2: f64) -> f64 {
    let data: f64 = counts.sides().iter().map(|(eps, c)| nll(model, c, *eps)).sum();
    data / counts.total() + 0.5 * l2 * model.w().norm_squared()
}

/// `∂ control_loss / ∂W = Σ ε c (E g)ᵀ / N + l2 W`, where `g` is the softmax
/// residual `row_total · p - counts` of each context.
pub fn control_grad(model: &ControlledLM, counts: &LabeledCounts, l2: f64) -> DMatrix<f64> {
    let n = counts.total();
    let mut grad = model.w() * l2;
    for (eps, side) in counts.sides() {
        for ctx in 0..=side.v {
            let total = side.row_totals[ctx];
            if total == 0.0 {
                continue;
            }
            let p = softmax(&model.logits_for(ctx, eps));
            let g: Vec<f64> = p.iter().zip(side.row(ctx)).map(|(p, c)| (total * p - c) / n).collect();
            let eg = model.e() * nalgebra::DVector::from_vec(g);
            let c = model.c().column(ctx);
            grad += (c * eg.transpose()) * eps;
        }
    }
    grad
}

fn check_corpus(counts: &BigramCounts, end: usize) -> Result<()> {
    if counts.distinct_tokens(end) < 2 {
        return Err(Error::DegenerateCorpus);
    }
    Ok(())
}

fn batches<'a, T>(items: &'a [T], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<&'a T>> {
    let mut refs: Vec<&T> = items.iter().collect();
    if cfg.batch_size == 0 || cfg.batch_size >= items.len() {
        return vec![refs];
    }
    refs.shuffle(rng);
    refs.chunks(cfg.batch_size).map(<[&T]>::to_vec).collect()
}

/// Fits `E` and `C` by gradient descent on the mean next-token
/// cross-entropy, with `W` held at zero.
pub fn train_base(model: &mut ControlledLM, sequences: &[Vec<usize>], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let v = model.vocab().len();
    let full = BigramCounts::from_sequences(v, sequences);
    check_corpus(&full, model.vocab().end())?;
    let d = model.dim();
    model.parts_mut().2.fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog { losses: vec![base_loss(model, &full)] };
    for _ in 0..cfg.epochs {
        for batch in batches(sequences, cfg, &mut rng) {
            let counts = BigramCounts::from_sequences(v, batch);
            let mut de = DMatrix::<f64>::zeros(d, v);
            let mut dc = DMatrix::<f64>::zeros(d, v + 1);
            for ctx in 0..=v {
                let total = counts.row_totals[ctx];
                if total == 0.0 {
                    continue;
                }
                let p = softmax(&model.logits_for(ctx, 0.0));
                let g = nalgebra::DVector::from_iterator(
                    v,
                    p.iter().zip(counts.row(ctx)).map(|(p, c)| (total * p - c) / counts.total),
                );
                dc.set_column(ctx, &(model.e() * &g));
                de += model.c().column(ctx) * g.transpose();
            }
            let (e, c, _) = model.parts_mut();
            *e -= de * cfg.learning_rate;
            *c -= dc * cfg.learning_rate;
        }
        log.losses.push(base_loss(model, &full));
    }
    if !model.e().iter().chain(model.c().iter()).all(|x| x.is_finite()) {
        return Err(Error::InvalidConfig("base training diverged; lower the learning rate".into()));
    }
    Ok(log)
}

/// Fits `W` alone, each record scored at its own ε label.
pub fn train_control(model: &mut ControlledLM, records: &[(i8, Vec<usize>)], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let v = model.vocab().len();
    let full = LabeledCounts::from_labeled(v, records)?;
    match (full.negative.total > 0.0, full.positive.total > 0.0) {
        (true, true) => {}
        (false, true) => return Err(Error::MissingLabelSide { present: 1 }),
        (true, false) => return Err(Error::MissingLabelSide { present: -1 }),
        (false, false) => return Err(Error::DegenerateCorpus),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog { losses: vec![control_loss(model, &full, cfg.l2)] };
    for _ in 0..cfg.epochs {
        for batch in batches(records, cfg, &mut rng) {
            let counts = LabeledCounts::from_labeled(v, batch)?;
            if counts.total() == 0.0 {
                continue;
            }
            let grad = control_grad(model, &counts, cfg.l2);
            *model.parts_mut().2 -= grad * cfg.learning_rate;
        }
        log.losses.push(control_loss(model, &full, cfg.l2));
    }
    if !model.w().iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidConfig("control training diverged; lower the learning rate".into()));
    }
    Ok(log)
}
