//! Semantic consistency module: stacked pre-norm transformer units over the
//! per-scale tokens of a representation, and the consistency loss between
//! the two sides' semantic features.
//!
//! A representation `v` of width `m = n_scale * n_out` is read as `n_scale`
//! tokens of width `n_out` (one per scale branch), so attention mixes
//! information across temporal scales.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{cosine_sim, cosine_sim_grad};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{self, join, LayerNorm, LayerNormCache, Linear, Mat, Param, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub n_trans: usize,
    pub n_head: usize,
    /// MLP hidden width as a multiple of the token width.
    pub mlp_ratio: usize,
    pub dropout: f64,
    /// One transformer stack for both sides (`true`) or one per side.
    pub share_weights: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig { n_trans: 1, n_head: 16, mlp_ratio: 4, dropout: 0.1, share_weights: true }
    }
}

impl TransformerConfig {
    pub fn validate(&self, token_width: usize) -> Result<()> {
        if self.n_trans == 0 {
            return Err(Error::invalid("semantic.n_trans", "must be at least 1"));
        }
        if self.n_head == 0 || !token_width.is_multiple_of(self.n_head) {
            return Err(Error::invalid(
                "semantic.n_head",
                format!("{} heads do not divide the token width {}", self.n_head, token_width),
            ));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::invalid("semantic.mlp_ratio", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("semantic.dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// `a (r x n) . W (n x c)`, `W` stored row-major.
fn matmul(a: &Mat, w: &[f64], cols: usize) -> Mat {
    let mut y = Mat::zeros(a.rows, cols);
    for r in 0..a.rows {
        let yr = &mut y.data[r * cols..(r + 1) * cols];
        for (k, &x) in a.row(r).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wk = &w[k * cols..(k + 1) * cols];
            yr.iter_mut().zip(wk).for_each(|(y, w)| *y += x * w);
        }
    }
    y
}

/// Backward of `y = a W`: accumulates `a^T dy` into `dw`, returns `dy W^T`.
fn matmul_backward(a: &Mat, w: &[f64], dw: &mut [f64], dy: &Mat) -> Mat {
    let cols = dy.cols;
    let mut da = Mat::zeros(a.rows, a.cols);
    for r in 0..a.rows {
        let dyr = dy.row(r);
        for k in 0..a.cols {
            let wk = &w[k * cols..(k + 1) * cols];
            let dwk = &mut dw[k * cols..(k + 1) * cols];
            let x = a.data[r * a.cols + k];
            let mut acc = 0.0;
            for c in 0..cols {
                dwk[c] += x * dyr[c];
                acc += dyr[c] * wk[c];
            }
            da.data[r * a.cols + k] = acc;
        }
    }
    da
}

/// Multi-head scaled dot-product attention with bias-free projections
/// `Q W^Q`, `K W^K`, `V W^V` and output projection `W^O`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub width: usize,
    pub n_head: usize,
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub wo: Param,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Mat,
    k: Mat,
    v: Mat,
    qp: Mat,
    kp: Mat,
    vp: Mat,
    /// Per head, `S_q x S_k` attention weights.
    pub probs: Vec<Mat>,
    concat: Mat,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(width: usize, n_head: usize, rng: &mut R) -> Result<Self> {
        if n_head == 0 || !width.is_multiple_of(n_head) {
            return Err(Error::invalid("semantic.n_head", format!("{n_head} heads do not divide width {width}")));
        }
        let mk = |rng: &mut R| Param::fan_in_uniform(&[width, width], width, rng);
        Ok(MultiHeadAttention { width, n_head, wq: mk(rng), wk: mk(rng), wv: mk(rng), wo: mk(rng) })
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.n_head
    }

    pub fn forward(&self, q: &Mat, k: &Mat, v: &Mat) -> Result<(Mat, AttentionCache)> {
        let w = self.width;
        if q.cols != w || k.cols != w || v.cols != w {
            return Err(Error::Shape(format!(
                "attention width {w}, got q {} k {} v {}",
                q.cols, k.cols, v.cols
            )));
        }
        if k.rows != v.rows {
            return Err(Error::Shape("key and value sequences differ in length".into()));
        }
        let qp = matmul(q, &self.wq.value, w);
        let kp = matmul(k, &self.wk.value, w);
        let vp = matmul(v, &self.wv.value, w);
        let dk = self.head_dim();
        let scale = 1.0 / math::sqrt(dk as f64);
        let mut concat = Mat::zeros(q.rows, w);
        let mut probs = Vec::with_capacity(self.n_head);
        for h in 0..self.n_head {
            let cols = h * dk..(h + 1) * dk;
            let mut p = Mat::zeros(q.rows, k.rows);
            for i in 0..q.rows {
                let qi = &qp.row(i)[cols.clone()];
                let scores: Vec<f64> = (0..k.rows)
                    .map(|j| qi.iter().zip(&kp.row(j)[cols.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let row = nn::softmax(&scores);
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &vp.row(j)[cols.clone()];
                    let out = &mut concat.data[i * w + h * dk..i * w + (h + 1) * dk];
                    out.iter_mut().zip(vj).for_each(|(o, x)| *o += pij * x);
                }
                p.row_mut(i).copy_from_slice(&row);
            }
            probs.push(p);
        }
        let y = matmul(&concat, &self.wo.value, w);
        Ok((y, AttentionCache { q: q.clone(), k: k.clone(), v: v.clone(), qp, kp, vp, probs, concat }))
    }

    /// Returns `(dQ, dK, dV)`.
    pub fn backward(&mut self, cache: &AttentionCache, dy: &Mat) -> (Mat, Mat, Mat) {
        let w = self.width;
        let dk = self.head_dim();
        let scale = 1.0 / math::sqrt(dk as f64);
        let dconcat = matmul_backward(&cache.concat, &self.wo.value, &mut self.wo.grad, dy);
        let (sq, sk) = (cache.qp.rows, cache.kp.rows);
        let mut dqp = Mat::zeros(sq, w);
        let mut dkp = Mat::zeros(sk, w);
        let mut dvp = Mat::zeros(sk, w);
        for h in 0..self.n_head {
            let off = h * dk;
            let p = &cache.probs[h];
            for i in 0..sq {
                let dout = &dconcat.row(i)[off..off + dk];
                let dp: Vec<f64> = (0..sk)
                    .map(|j| dout.iter().zip(&cache.vp.row(j)[off..off + dk]).map(|(a, b)| a * b).sum())
                    .collect();
                for j in 0..sk {
                    let pij = p.data[i * sk + j];
                    for d in 0..dk {
                        dvp.data[j * w + off + d] += pij * dout[d];
                    }
                }
                let dscores = nn::softmax_backward(p.row(i), &dp);
                for (j, &g) in dscores.iter().enumerate() {
                    let g = g * scale;
                    for d in 0..dk {
                        dqp.data[i * w + off + d] += g * cache.kp.data[j * w + off + d];
                        dkp.data[j * w + off + d] += g * cache.qp.data[i * w + off + d];
                    }
                }
            }
        }
        let dq = matmul_backward(&cache.q, &self.wq.value, &mut self.wq.grad, &dqp);
        let dkk = matmul_backward(&cache.k, &self.wk.value, &mut self.wk.grad, &dkp);
        let dv = matmul_backward(&cache.v, &self.wv.value, &mut self.wv.grad, &dvp);
        (dq, dkk, dv)
    }
}

impl Parameters for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "wq"), &self.wq);
        f(&join(prefix, "wk"), &self.wk);
        f(&join(prefix, "wv"), &self.wv);
        f(&join(prefix, "wo"), &self.wo);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "wq"), &mut self.wq);
        f(&join(prefix, "wk"), &mut self.wk);
        f(&join(prefix, "wv"), &mut self.wv);
        f(&join(prefix, "wo"), &mut self.wo);
    }
}

/// `psi = h + MHAttn(Norm(h))`, `z = psi + MLP(Norm(psi))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerUnit {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub struct UnitCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    attn_mask: Option<Vec<f64>>,
    ln2: LayerNormCache,
    b: Mat,
    m1: Mat,
    r: Mat,
    mlp_mask: Option<Vec<f64>>,
}

impl UnitCache {
    pub fn kink_signs(&self, out: &mut Vec<bool>) {
        out.extend(self.m1.data.iter().map(|&x| x > 0.0));
    }
}

impl SemanticCache {
    pub fn kink_signs(&self, out: &mut Vec<bool>) {
        for u in &self.units {
            u.kink_signs(out);
        }
    }
}

impl TransformerUnit {
    pub fn new<R: Rng + ?Sized>(width: usize, cfg: &TransformerConfig, rng: &mut R) -> Result<Self> {
        let hidden = width * cfg.mlp_ratio;
        Ok(TransformerUnit {
            ln1: LayerNorm::new(width),
            attn: MultiHeadAttention::new(width, cfg.n_head, rng)?,
            ln2: LayerNorm::new(width),
            fc1: Linear::new(width, hidden, rng),
            fc2: Linear::new(hidden, width, rng),
            dropout: cfg.dropout,
        })
    }

    pub fn forward<R: Rng + ?Sized>(&self, h: &Mat, mut rng: Option<&mut R>) -> Result<(Mat, UnitCache)> {
        let (a, ln1) = self.ln1.forward(h)?;
        let (mut att, attn) = self.attn.forward(&a, &a, &a)?;
        let attn_mask = nn::dropout_mask(att.data.len(), self.dropout, rng.as_deref_mut());
        nn::apply_mask(&mut att.data, attn_mask.as_ref());
        let mut psi = h.clone();
        psi.add_assign(&att);
        let (b, ln2) = self.ln2.forward(&psi)?;
        let m1 = self.fc1.forward(&b)?;
        let r = nn::relu(&m1);
        let mut m2 = self.fc2.forward(&r)?;
        let mlp_mask = nn::dropout_mask(m2.data.len(), self.dropout, rng);
        nn::apply_mask(&mut m2.data, mlp_mask.as_ref());
        let mut z = psi;
        z.add_assign(&m2);
        Ok((z, UnitCache { ln1, attn, attn_mask, ln2, b, m1, r, mlp_mask }))
    }

    pub fn backward(&mut self, cache: &UnitCache, dz: &Mat) -> Mat {
        let mut dm2 = dz.clone();
        nn::apply_mask(&mut dm2.data, cache.mlp_mask.as_ref());
        let dr = self.fc2.backward(&cache.r, &dm2);
        let dm1 = nn::relu_backward(&cache.m1, &dr);
        let db = self.fc1.backward(&cache.b, &dm1);
        let mut dpsi = dz.clone();
        dpsi.add_assign(&self.ln2.backward(&cache.ln2, &db));
        let mut datt = dpsi.clone();
        nn::apply_mask(&mut datt.data, cache.attn_mask.as_ref());
        let (dq, dk, dv) = self.attn.backward(&cache.attn, &datt);
        let mut da = dq;
        da.add_assign(&dk);
        da.add_assign(&dv);
        let mut dh = dpsi;
        dh.add_assign(&self.ln1.backward(&cache.ln1, &da));
        dh
    }
}

impl Parameters for TransformerUnit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.fc1.visit(&join(prefix, "mlp1"), f);
        self.fc2.visit(&join(prefix, "mlp2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.fc1.visit_mut(&join(prefix, "mlp1"), f);
        self.fc2.visit_mut(&join(prefix, "mlp2"), f);
    }
}

/// `N_trans` stacked units mapping a representation to a semantic feature
/// of the same width.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEncoder {
    pub units: Vec<TransformerUnit>,
    tokens: usize,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct SemanticCache {
    units: Vec<UnitCache>,
}

impl SemanticEncoder {
    pub fn new<R: Rng + ?Sized>(
        tokens: usize,
        width: usize,
        cfg: &TransformerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(width)?;
        let units = (0..cfg.n_trans)
            .map(|_| TransformerUnit::new(width, cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(SemanticEncoder { units, tokens, width })
    }

    pub fn forward<R: Rng + ?Sized>(&self, v: &[f64], mut rng: Option<&mut R>) -> Result<(Vec<f64>, SemanticCache)> {
        if v.len() != self.tokens * self.width {
            return Err(Error::Shape(format!(
                "semantic input has width {}, expected {}",
                v.len(),
                self.tokens * self.width
            )));
        }
        let mut h = Mat::from_vec(self.tokens, self.width, v.to_vec());
        let mut caches = Vec::with_capacity(self.units.len());
        for (i, unit) in self.units.iter().enumerate() {
            let (z, c) = unit.forward(&h, rng.as_deref_mut())?;
            if !z.is_finite() {
                return Err(Error::Numeric(format!("non-finite activation in transformer unit {i}")));
            }
            caches.push(c);
            h = z;
        }
        Ok((h.data, SemanticCache { units: caches }))
    }

    pub fn backward(&mut self, cache: &SemanticCache, dz: &[f64]) -> Vec<f64> {
        let mut d = Mat::from_vec(self.tokens, self.width, dz.to_vec());
        for (unit, c) in self.units.iter_mut().zip(&cache.units).rev() {
            d = unit.backward(c, &d);
        }
        d.data
    }
}

impl Parameters for SemanticEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit(&join(prefix, &format!("unit{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("unit{i}")), f);
        }
    }
}

/// Semantic consistency loss `1 - cos(z_f, z_e)`, in `[0, 2]` and zero at
/// perfect agreement.
pub fn l_sc(z_f: &[f64], z_e: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_sim(z_f, z_e)?)
}

pub fn l_sc_with_grad(z_f: &[f64], z_e: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (s, ga, gb) = cosine_sim_grad(z_f, z_e)?;
    Ok((1.0 - s, ga.into_iter().map(|g| -g).collect(), gb.into_iter().map(|g| -g).collect()))
}
