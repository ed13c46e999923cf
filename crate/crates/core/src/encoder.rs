//! Multiscale spatio-temporal convolution (MSC) encoder.
//!
//! ```text
//! x (channels x T)
//!   -> adapter[modality]   width-1 conv, channels -> d         (per modality)
//!   -> embed               conv k, d -> d, ReLU                = C  (shared)
//!   -> branch i            conv k dilation base^i, ReLU        = C^enc_i
//!        block             conv k, d -> N_out, mean over time
//!        Norm              layer norm over the N_out features
//!        phi_i = max(alpha * Norm(.), Norm(.))
//!   -> v = concat(phi_1 .. phi_NScale)                          (m = N_scale * N_out)
//! ```
//!
//! Everything after the adapter is shared by both modalities; global
//! average pooling makes `m` independent of the input length.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, join, Conv1d, LayerNorm, LayerNormCache, Mat, Param, Parameters};
use crate::signal::{Modality, Signal};

/// Encoder hyperparameters. `temperature` is the contrastive-loss
/// temperature applied to the encoder outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MscConfig {
    /// Embedding width `d`.
    pub d: usize,
    pub n_scale: usize,
    pub n_out: usize,
    /// Control weight of the leaky max, in `(0, 1]`.
    pub alpha: f64,
    pub kernel_size: usize,
    /// Branch `i` (from 0) uses dilation `dilation_base^i`.
    pub dilation_base: usize,
    pub dropout: f64,
    pub temperature: f64,
}

impl Default for MscConfig {
    fn default() -> Self {
        MscConfig {
            d: 16,
            n_scale: 5,
            n_out: 32,
            alpha: 0.3,
            kernel_size: 3,
            dilation_base: 2,
            dropout: 0.1,
            temperature: 0.2,
        }
    }
}

impl MscConfig {
    /// Representation width `m = n_scale * n_out`.
    pub fn embedding_dim(&self) -> usize {
        self.n_scale * self.n_out
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("model.d", "must be at least 1"));
        }
        if self.n_scale == 0 {
            return Err(Error::invalid("model.n_scale", "must be at least 1"));
        }
        if self.n_out == 0 {
            return Err(Error::invalid("model.n_out", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("model.alpha", "must lie in (0, 1]"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid("model.kernel_size", "must be odd"));
        }
        if self.dilation_base == 0 {
            return Err(Error::invalid("model.dilation_base", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("model.dropout", "must lie in [0, 1)"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid("model.temperature", "contrastive temperature must be positive"));
        }
        Ok(())
    }

    pub fn dilation(&self, branch: usize) -> usize {
        self.dilation_base.pow(branch as u32)
    }
}

/// `max(alpha * z, z)` elementwise.
pub fn leaky_max(z: &[f64], alpha: f64) -> Vec<f64> {
    z.iter().map(|&v| (alpha * v).max(v)).collect()
}

fn leaky_max_backward(z: &[f64], alpha: f64, dy: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(dy)
        .map(|(&v, &g)| if alpha * v > v { alpha * g } else { g })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Branch {
    scale: Conv1d,
    block: Conv1d,
    norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MscEncoder {
    cfg: MscConfig,
    adapters: BTreeMap<Modality, Conv1d>,
    embed: Conv1d,
    branches: Vec<Branch>,
}

/// Activations kept by [`MscEncoder::adapter_forward`].
#[derive(Debug, Clone)]
pub struct AdapterCache {
    modality: Modality,
    x: Mat,
    adapted: Mat,
    pre: Mat,
}

#[derive(Debug, Clone)]
struct BranchCache {
    pre: Mat,
    c_enc: Mat,
    ln: LayerNormCache,
    normed: Vec<f64>,
}

/// Activations kept by [`MscEncoder::msc_forward`].
#[derive(Debug, Clone)]
pub struct MscCache {
    c: Mat,
    branches: Vec<BranchCache>,
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    adapter: AdapterCache,
    msc: MscCache,
}

fn push_signs(m: &Mat, out: &mut Vec<bool>) {
    out.extend(m.data.iter().map(|&x| x > 0.0));
}

impl AdapterCache {
    /// Which side of zero every rectifier input lies on.
    pub fn kink_signs(&self, out: &mut Vec<bool>) {
        push_signs(&self.pre, out);
    }
}

impl MscCache {
    /// Which side of zero every rectifier and leaky-max input lies on.
    pub fn kink_signs(&self, out: &mut Vec<bool>) {
        for b in &self.branches {
            push_signs(&b.pre, out);
            out.extend(b.normed.iter().map(|&x| x > 0.0));
        }
    }
}

impl EncodeCache {
    pub fn kink_signs(&self, out: &mut Vec<bool>) {
        self.adapter.kink_signs(out);
        self.msc.kink_signs(out);
    }
}

pub fn signal_matrix(signal: &Signal) -> Mat {
    Mat::from_vec(signal.channels(), signal.timesteps(), signal.data().to_vec())
}

impl MscEncoder {
    /// `inputs` lists the channel count of every modality the encoder will
    /// see.
    pub fn new<R: Rng + ?Sized>(cfg: MscConfig, inputs: &[(Modality, usize)], rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut adapters = BTreeMap::new();
        for &(m, channels) in inputs {
            if channels == 0 {
                return Err(Error::invalid("channels", format!("{m} input has no channels")));
            }
            adapters.entry(m).or_insert_with(|| Conv1d::new(channels, cfg.d, 1, 1, rng));
        }
        let embed = Conv1d::new(cfg.d, cfg.d, cfg.kernel_size, 1, rng);
        let branches = (0..cfg.n_scale)
            .map(|i| Branch {
                scale: Conv1d::new(cfg.d, cfg.d, cfg.kernel_size, cfg.dilation(i), rng),
                block: Conv1d::new(cfg.d, cfg.n_out, cfg.kernel_size, 1, rng),
                norm: LayerNorm::new(cfg.n_out),
            })
            .collect();
        Ok(MscEncoder { cfg, adapters, embed, branches })
    }

    pub fn config(&self) -> &MscConfig {
        &self.cfg
    }

    pub fn modalities(&self) -> impl Iterator<Item = (Modality, usize)> + '_ {
        self.adapters.iter().map(|(m, c)| (*m, c.in_ch))
    }

    /// Modality-specific channel adapter followed by the shared embedding
    /// convolution; returns the `d x T` latent sequence `C`.
    pub fn adapter_forward(&self, x: &Mat, modality: Modality) -> Result<(Mat, AdapterCache)> {
        let adapter = self
            .adapters
            .get(&modality)
            .ok_or_else(|| Error::Shape(format!("encoder has no adapter for {modality}")))?;
        let adapted = adapter.forward(x)?;
        let pre = self.embed.forward(&adapted)?;
        let c = nn::relu(&pre);
        Ok((c, AdapterCache { modality, x: x.clone(), adapted, pre }))
    }

    /// Scale branches, blocks, normalization and leaky max on a latent
    /// sequence. Dropout on `v` is applied only when `dropout_rng` is given.
    pub fn msc_forward<R: Rng + ?Sized>(
        &self,
        c: &Mat,
        dropout_rng: Option<&mut R>,
    ) -> Result<(Vec<f64>, MscCache)> {
        if c.rows != self.cfg.d {
            return Err(Error::Shape(format!("latent width {} != d = {}", c.rows, self.cfg.d)));
        }
        let mut v = Vec::with_capacity(self.cfg.embedding_dim());
        let mut caches = Vec::with_capacity(self.branches.len());
        for (i, br) in self.branches.iter().enumerate() {
            let pre = br.scale.forward(c)?;
            let c_enc = nn::relu(&pre);
            let block = br.block.forward(&c_enc)?;
            let t = block.cols as f64;
            let pooled: Vec<f64> = (0..block.rows).map(|r| block.row(r).iter().sum::<f64>() / t).collect();
            let (normed, ln) = br.norm.forward(&Mat::from_vec(1, self.cfg.n_out, pooled))?;
            if !normed.is_finite() {
                return Err(Error::Numeric(format!("non-finite activation in scale branch {i}")));
            }
            v.extend(leaky_max(&normed.data, self.cfg.alpha));
            caches.push(BranchCache { pre, c_enc, ln, normed: normed.data });
        }
        let mask = nn::dropout_mask(v.len(), self.cfg.dropout, dropout_rng);
        nn::apply_mask(&mut v, mask.as_ref());
        Ok((v, MscCache { c: c.clone(), branches: caches, mask }))
    }

    pub fn encode<R: Rng + ?Sized>(
        &self,
        signal: &Signal,
        dropout_rng: Option<&mut R>,
    ) -> Result<(Vec<f64>, EncodeCache)> {
        let (c, adapter) = self.adapter_forward(&signal_matrix(signal), signal.modality())?;
        let (v, msc) = self.msc_forward(&c, dropout_rng)?;
        Ok((v, EncodeCache { adapter, msc }))
    }

    /// Accumulates parameter gradients; returns `dL/dC`.
    pub fn msc_backward(&mut self, cache: &MscCache, dv: &[f64]) -> Mat {
        let n_out = self.cfg.n_out;
        let alpha = self.cfg.alpha;
        let mut dv = dv.to_vec();
        nn::apply_mask(&mut dv, cache.mask.as_ref());
        let mut dc = Mat::zeros(cache.c.rows, cache.c.cols);
        for (i, (br, bc)) in self.branches.iter_mut().zip(&cache.branches).enumerate() {
            let dphi = &dv[i * n_out..(i + 1) * n_out];
            let dnormed = leaky_max_backward(&bc.normed, alpha, dphi);
            let dpooled = br.norm.backward(&bc.ln, &Mat::from_vec(1, n_out, dnormed));
            let t = bc.c_enc.cols;
            let mut dblock = Mat::zeros(n_out, t);
            for r in 0..n_out {
                dblock.row_mut(r).fill(dpooled.data[r] / t as f64);
            }
            let dc_enc = br.block.backward(&bc.c_enc, &dblock);
            let dpre = nn::relu_backward(&bc.pre, &dc_enc);
            dc.add_assign(&br.scale.backward(&cache.c, &dpre));
        }
        dc
    }

    /// Accumulates adapter and embedding gradients; returns `dL/dx`.
    pub fn adapter_backward(&mut self, cache: &AdapterCache, dc: &Mat) -> Mat {
        let dpre = nn::relu_backward(&cache.pre, dc);
        let dadapted = self.embed.backward(&cache.adapted, &dpre);
        let adapter = self.adapters.get_mut(&cache.modality).expect("adapter used in forward");
        adapter.backward(&cache.x, &dadapted)
    }

    pub fn backward(&mut self, cache: &EncodeCache, dv: &[f64]) -> Mat {
        let dc = self.msc_backward(&cache.msc, dv);
        self.adapter_backward(&cache.adapter, &dc)
    }
}

impl Parameters for MscEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (m, a) in &self.adapters {
            a.visit(&join(prefix, &format!("adapter.{}", m.file_tag())), f);
        }
        self.embed.visit(&join(prefix, "embed"), f);
        for (i, br) in self.branches.iter().enumerate() {
            let p = join(prefix, &format!("branch{i}"));
            br.scale.visit(&join(&p, "scale"), f);
            br.block.visit(&join(&p, "block"), f);
            br.norm.visit(&join(&p, "norm"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (m, a) in self.adapters.iter_mut() {
            a.visit_mut(&join(prefix, &format!("adapter.{}", m.file_tag())), f);
        }
        self.embed.visit_mut(&join(prefix, "embed"), f);
        for (i, br) in self.branches.iter_mut().enumerate() {
            let p = join(prefix, &format!("branch{i}"));
            br.scale.visit_mut(&join(&p, "scale"), f);
            br.block.visit_mut(&join(&p, "block"), f);
            br.norm.visit_mut(&join(&p, "norm"), f);
        }
    }
}

/// Encoder without dropout, for shape and sharing checks.
pub fn encode_eval(enc: &MscEncoder, signal: &Signal) -> Result<Vec<f64>> {
    Ok(enc.encode::<crate::rng::Rng>(signal, None)?.0)
}
