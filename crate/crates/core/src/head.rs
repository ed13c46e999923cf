//! Recognition head: fusion classifier over `[z_f ; z_e]`, focal loss and
//! the weighted total objective.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::{self, join, Linear, Mat, Param, Parameters};

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    pub alpha_f: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    /// Hidden width of the fusion classifier; the representation width `m`
    /// when absent.
    pub hidden: Option<usize>,
    pub dropout: f64,
    /// Focal-loss weight (distinct from the encoder's control weight).
    pub alpha_f: f64,
    pub gamma: f64,
    /// Weight of the contrastive loss.
    pub lambda1: f64,
    /// Weight of the semantic consistency loss.
    pub lambda2: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { hidden: None, dropout: 0.1, alpha_f: 0.25, gamma: 2.0, lambda1: 1.0, lambda2: 1.0 }
    }
}

impl HeadConfig {
    pub fn focal(&self) -> FocalConfig {
        FocalConfig { alpha_f: self.alpha_f, gamma: self.gamma }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == Some(0) {
            return Err(Error::invalid("head.hidden", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("head.dropout", "must lie in [0, 1)"));
        }
        if !(self.alpha_f > 0.0 && self.alpha_f <= 1.0) {
            return Err(Error::invalid("head.alpha_f", "must lie in (0, 1]"));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("head.gamma", "must be non-negative"));
        }
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(Error::invalid("head.lambda1", "must be non-negative"));
        }
        if !(self.lambda2 >= 0.0) || !self.lambda2.is_finite() {
            return Err(Error::invalid("head.lambda2", "must be non-negative"));
        }
        Ok(())
    }
}

/// Two affine layers with a rectifier between them, softmax over
/// {CONTROL, DEPRESSED}.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub fc1: Linear,
    pub fc2: Linear,
    feature_dim: usize,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    fused: Mat,
    pre: Mat,
    hidden: Mat,
    mask: Option<Vec<f64>>,
}

impl HeadCache {
    pub fn kink_signs(&self, out: &mut Vec<bool>) {
        out.extend(self.pre.data.iter().map(|&x| x > 0.0));
    }
}

impl FusionHead {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, cfg: &HeadConfig, rng: &mut R) -> Self {
        let hidden = cfg.hidden.unwrap_or(feature_dim);
        FusionHead {
            fc1: Linear::new(2 * feature_dim, hidden, rng),
            fc2: Linear::new(hidden, 2, rng),
            feature_dim,
            dropout: cfg.dropout,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        z_f: &[f64],
        z_e: &[f64],
        rng: Option<&mut R>,
    ) -> Result<([f64; 2], HeadCache)> {
        if z_f.len() != self.feature_dim || z_e.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "head expects two features of width {}, got {} and {}",
                self.feature_dim,
                z_f.len(),
                z_e.len()
            )));
        }
        let mut fused_v = Vec::with_capacity(2 * self.feature_dim);
        fused_v.extend_from_slice(z_f);
        fused_v.extend_from_slice(z_e);
        let fused = Mat::from_vec(1, fused_v.len(), fused_v);
        let pre = self.fc1.forward(&fused)?;
        let mut hidden = nn::relu(&pre);
        let mask = nn::dropout_mask(hidden.data.len(), self.dropout, rng);
        nn::apply_mask(&mut hidden.data, mask.as_ref());
        let out = self.fc2.forward(&hidden)?;
        Ok(([out.data[0], out.data[1]], HeadCache { fused, pre, hidden, mask }))
    }

    /// Returns `(dz_f, dz_e)`.
    pub fn backward(&mut self, cache: &HeadCache, dlogits: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let dh = self.fc2.backward(&cache.hidden, &Mat::from_vec(1, 2, dlogits.to_vec()));
        let mut dh = dh;
        nn::apply_mask(&mut dh.data, cache.mask.as_ref());
        let dpre = nn::relu_backward(&cache.pre, &dh);
        let dfused = self.fc1.backward(&cache.fused, &dpre);
        let (a, b) = dfused.data.split_at(self.feature_dim);
        (a.to_vec(), b.to_vec())
    }

    /// Class probabilities without dropout.
    pub fn fuse_classify(&self, z_f: &[f64], z_e: &[f64]) -> Result<[f64; 2]> {
        let (logits, _) = self.forward::<crate::rng::Rng>(z_f, z_e, None)?;
        Ok(softmax2(logits))
    }
}

impl Parameters for FusionHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let p = nn::softmax(&logits);
    [p[0], p[1]]
}

/// `-alpha_f (1 - P)^gamma log(P)` for the true-class probability `P`,
/// clamped below at [`PROB_EPS`].
pub fn focal_loss(p: f64, cfg: &FocalConfig) -> Result<f64> {
    if !(p <= 1.0) {
        return Err(Error::Numeric(format!("probability {p} outside (0, 1]")));
    }
    let p = p.max(PROB_EPS);
    Ok(-cfg.alpha_f * math::powf(1.0 - p, cfg.gamma) * math::ln(p))
}

/// Batch mean of [`focal_loss`].
pub fn focal_loss_mean(ps: &[f64], cfg: &FocalConfig) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    let mut total = 0.0;
    for &p in ps {
        total += focal_loss(p, cfg)?;
    }
    Ok(total / ps.len() as f64)
}

fn focal_dp(p: f64, cfg: &FocalConfig) -> f64 {
    let q = 1.0 - p;
    let lnp = math::ln(p);
    let focus = if cfg.gamma == 0.0 || lnp == 0.0 {
        0.0
    } else {
        cfg.gamma * math::powf(q, cfg.gamma - 1.0) * lnp
    };
    cfg.alpha_f * (focus - math::powf(q, cfg.gamma) / p)
}

/// Focal loss of one example from its logits, with the gradient with
/// respect to the logits.
pub fn focal_from_logits(logits: [f64; 2], label: usize, cfg: &FocalConfig) -> Result<(f64, [f64; 2])> {
    let probs = softmax2(logits);
    let p = probs[label];
    let loss = focal_loss(p, cfg)?;
    if p < PROB_EPS {
        return Ok((loss, [0.0, 0.0]));
    }
    let dp = focal_dp(p, cfg);
    let mut d = [0.0; 2];
    for (j, dj) in d.iter_mut().enumerate() {
        let delta = if j == label { 1.0 } else { 0.0 };
        *dj = dp * p * (delta - probs[j]);
    }
    Ok((loss, d))
}

/// `lambda1 * L_MSC + lambda2 * L_SC + L_FL`.
pub fn total_loss(l_msc: f64, l_sc: f64, l_fl: f64, w: &LossWeights) -> f64 {
    w.lambda1 * l_msc + w.lambda2 * l_sc + l_fl
}
