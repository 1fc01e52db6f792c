use serde::{Deserialize, Serialize};

use super::{check_epsilon, softmax, ControlledLM};
use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

pub const INTERPRETATION: &str = "lambda_max = largest singular value of W; L = enumerated sequence length; \
P(.) = base model (epsilon = 0) distribution over all length-L sequences; \
lhs = L1 distance between P(.|k*eps) and (1-k)P(.) + kP(.|eps); \
rhs = 2|k(1-k)| eps^2 L^2 lambda_max (exp(lambda_max) - 1)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub k: f64,
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// How far the model at control value `k·ε` is from the straight mixture
/// of the base model and the model at `ε`, against the interpolation bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub seq_len: usize,
    pub vocab_size: usize,
    pub lambda_max: f64,
    pub points: Vec<BoundPoint>,
    pub interpretation: String,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.points.iter().all(|p| p.pass)
    }

    pub fn markdown(&self) -> String {
        let mut out = format!(
            "L = {}, |V| = {}, lambda_max = {:.6}\n\n| ε | k | lhs | rhs | pass |\n|---:|---:|---:|---:|:---:|\n",
            self.seq_len, self.vocab_size, self.lambda_max
        );
        for p in &self.points {
            out.push_str(&format!(
                "| {} | {} | {:.3e} | {:.3e} | {} |\n",
                p.epsilon,
                p.k,
                p.lhs,
                p.rhs,
                if p.pass { "yes" } else { "no" }
            ));
        }
        out
    }
}

/// Next-token tables for every context at one control value.
fn tables(model: &ControlledLM, eps: f64) -> Vec<Vec<f64>> {
    (0..=model.vocab().len()).map(|ctx| softmax(&model.logits_for(ctx, eps))).collect()
}

/// Probabilities of all `|V|^len` sequences, in lexicographic order.
fn enumerate(tables: &[Vec<f64>], v: usize, len: usize) -> Vec<f64> {
    let mut probs = vec![1.0];
    let mut last: Vec<usize> = vec![v];
    for _ in 0..len {
        let mut next_p = Vec::with_capacity(probs.len() * v);
        let mut next_last = Vec::with_capacity(probs.len() * v);
        for (p, &ctx) in probs.iter().zip(&last) {
            for (t, q) in tables[ctx].iter().enumerate() {
                next_p.push(p * q);
                next_last.push(t);
            }
        }
        probs = next_p;
        last = next_last;
    }
    probs
}

pub fn lambda_max(model: &ControlledLM) -> f64 {
    model.w().clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Evaluates the bound at every `(k, ε)` pair by exact enumeration of all
/// sequences of length `seq_len`.
pub fn verify_bound(
    model: &ControlledLM,
    epsilons: &[f64],
    k_grid: &[f64],
    seq_len: usize,
    cap: u128,
) -> Result<BoundReport> {
    let v = model.vocab().len();
    let count = (v as u128).checked_pow(seq_len as u32).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    if seq_len == 0 {
        return Err(Error::InvalidConfig("sequence length must be at least 1".into()));
    }
    for &e in epsilons {
        check_epsilon(e)?;
    }
    let lam = lambda_max(model);
    let base = enumerate(&tables(model, 0.0), v, seq_len);
    let l = seq_len as f64;
    let mut points = Vec::new();
    for &eps in epsilons {
        let full = enumerate(&tables(model, eps), v, seq_len);
        for &k in k_grid {
            let mid = enumerate(&tables(model, k * eps), v, seq_len);
            let lhs: f64 = mid
                .iter()
                .zip(base.iter().zip(&full))
                .map(|(m, (b, f))| (m - (b + k * (f - b))).abs())
                .sum();
            let rhs = 2.0 * (k * (1.0 - k)).abs() * eps * eps * l * l * lam * lam.exp_m1();
            points.push(BoundPoint { k, epsilon: eps, lhs, rhs, pass: lhs <= rhs + 1e-12 });
        }
    }
    Ok(BoundReport { seq_len, vocab_size: v, lambda_max: lam, points, interpretation: INTERPRETATION.to_owned() })
}
