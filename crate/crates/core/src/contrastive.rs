//! Spatio-temporal contrasting loss: temperature-scaled cross entropy over
//! cosine similarities of `2N` embeddings, one positive per anchor and the
//! remaining `2N - 2` items as negatives, averaged over all anchors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

fn norm(a: &[f64]) -> f64 {
    math::sqrt(a.iter().map(|x| x * x).sum())
}

fn nonzero_norm(a: &[f64]) -> Result<f64> {
    let n = norm(a);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric(format!("cosine similarity of a vector with norm {n}")));
    }
    Ok(n)
}

/// `a.b / (|a| |b|)`. Zero-norm inputs are an error rather than 0.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of vectors of length {} and {}", a.len(), b.len())));
    }
    nonzero_norm(a)?;
    nonzero_norm(b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sa: f64 = a.iter().map(|x| x * x).sum();
    let sb: f64 = b.iter().map(|x| x * x).sum();
    // sqrt(sa * sb) rather than |a| |b|: exact +-1 for b = +-a.
    Ok((dot / math::sqrt(sa * sb)).clamp(-1.0, 1.0))
}

/// Cosine similarity and its gradients with respect to `a` and `b`.
pub fn cosine_sim_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let s = cosine_sim(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    let ga = a.iter().zip(b).map(|(x, y)| y / (na * nb) - s * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x / (na * nb) - s * y / (nb * nb)).collect();
    Ok((s, ga, gb))
}

/// `2N` embeddings with a symmetric, irreflexive positive-partner map.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    items: Vec<Vec<f64>>,
    positive: Vec<usize>,
    temperature: f64,
}

impl PairBatch {
    pub fn new(items: Vec<Vec<f64>>, positive: Vec<usize>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid("temperature", "must be positive"));
        }
        if !items.len().is_multiple_of(2) || items.len() < 4 {
            return Err(Error::invalid(
                "batch_size",
                format!("contrastive loss needs 2N items with N >= 2, got {}", items.len()),
            ));
        }
        if positive.len() != items.len() {
            return Err(Error::Shape("positive map length differs from item count".into()));
        }
        for (i, &p) in positive.iter().enumerate() {
            if p >= items.len() || p == i || positive[p] != i {
                return Err(Error::invalid("positive", "relation must be symmetric and irreflexive"));
            }
        }
        let dim = items[0].len();
        if items.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("embeddings differ in dimension".into()));
        }
        Ok(PairBatch { items, positive, temperature })
    }

    /// `[v_0, u_0, v_1, u_1, ...]` with `(v_k, u_k)` as positives.
    pub fn interleaved(v: &[Vec<f64>], u: &[Vec<f64>], temperature: f64) -> Result<Self> {
        if v.len() != u.len() {
            return Err(Error::Shape(format!("{} v items vs {} u items", v.len(), u.len())));
        }
        let items: Vec<Vec<f64>> = v.iter().zip(u).flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        let positive = (0..items.len()).map(|i| i ^ 1).collect();
        Self::new(items, positive, temperature)
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn positive(&self, i: usize) -> usize {
        self.positive[i]
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    fn similarity_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.items.len();
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            s[i][i] = 1.0;
            for j in i + 1..n {
                let c = cosine_sim(&self.items[i], &self.items[j])?;
                s[i][j] = c;
                s[j][i] = c;
            }
        }
        Ok(s)
    }
}

fn anchor_terms(s: &[Vec<f64>], i: usize, pos: usize, tau: f64) -> (f64, Vec<f64>) {
    // Softmax over every j != i; returns (loss_i, softmax weights with 0 at i).
    let logits: Vec<f64> = (0..s.len())
        .map(|j| if j == i { f64::NEG_INFINITY } else { s[i][j] / tau })
        .collect();
    let lse = math::log_sum_exp(&logits);
    let weights = logits.iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { math::exp(l - lse) }).collect();
    (lse - logits[pos], weights)
}

/// Mean contrastive loss over all `2N` anchors.
pub fn l_msc(batch: &PairBatch) -> Result<f64> {
    let s = batch.similarity_matrix()?;
    let n = s.len();
    let total: f64 = (0..n)
        .map(|i| anchor_terms(&s, i, batch.positive[i], batch.temperature).0)
        .sum();
    Ok(total / n as f64)
}

/// Loss and its gradient with respect to every item.
pub fn l_msc_with_grad(batch: &PairBatch) -> Result<(f64, Vec<Vec<f64>>)> {
    let s = batch.similarity_matrix()?;
    let n = s.len();
    let tau = batch.temperature;
    let mut loss = 0.0;
    // dL/dS[i][j] for the ordered entry used by anchor i.
    let mut ds = vec![vec![0.0; n]; n];
    for i in 0..n {
        let pos = batch.positive[i];
        let (l, w) = anchor_terms(&s, i, pos, tau);
        loss += l;
        for j in 0..n {
            if j != i {
                let indicator = if j == pos { 1.0 } else { 0.0 };
                ds[i][j] = (w[j] - indicator) / (tau * n as f64);
            }
        }
    }
    let norms: Vec<f64> = batch.items.iter().map(|v| norm(v)).collect();
    let dim = batch.items[0].len();
    let mut grads = vec![vec![0.0; dim]; n];
    for k in 0..n {
        let ek = &batch.items[k];
        for j in 0..n {
            if j == k {
                continue;
            }
            let coef = ds[k][j] + ds[j][k];
            if coef == 0.0 {
                continue;
            }
            let ej = &batch.items[j];
            let skj = s[k][j];
            for d in 0..dim {
                let hat_j = ej[d] / norms[j];
                let hat_k = ek[d] / norms[k];
                grads[k][d] += coef * (hat_j - skj * hat_k) / norms[k];
            }
        }
    }
    Ok((loss / n as f64, grads))
}
