//! The composed network: shared encoder, semantic stack(s) and fusion head,
//! with the batch objective `lambda1 L_MSC + lambda2 L_SC + L_FL` and its
//! gradient.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::{InputMode, InputPair};
use crate::contrastive::{l_msc, l_msc_with_grad, PairBatch};
use crate::encoder::{EncodeCache, MscConfig, MscEncoder};
use crate::error::{Error, Result};
use crate::head::{self, FusionHead, HeadCache, HeadConfig};
use crate::metrics::{self, MetricsReport};
use crate::nn::{join, Param, Parameters};
use crate::rng::Rng;
use crate::semantic::{l_sc, l_sc_with_grad, SemanticCache, SemanticEncoder, TransformerConfig};
use crate::signal::{Label, Modality};

/// Architecture and loss settings needed to rebuild a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mode: InputMode,
    pub x_channels: usize,
    pub y_channels: usize,
    pub msc: MscConfig,
    pub semantic: TransformerConfig,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub msc: f64,
    pub sc: f64,
    pub fl: f64,
}

/// The four vectors of one input pair: representations `v`, `u` and
/// semantic features `z_f`, `z_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub z_f: Vec<f64>,
    pub z_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    pub encoder: MscEncoder,
    /// One stack when weights are shared, otherwise `[x side, y side]`.
    pub semantic: Vec<SemanticEncoder>,
    pub head: FusionHead,
}

struct ItemCache {
    enc_x: EncodeCache,
    enc_y: EncodeCache,
    sem_x: SemanticCache,
    sem_y: SemanticCache,
    head: HeadCache,
    z_f: Vec<f64>,
    z_e: Vec<f64>,
    logits: [f64; 2],
    label: Label,
}

struct ItemOut {
    v: Vec<f64>,
    u: Vec<f64>,
    cache: ItemCache,
}

/// Representations `v`, `u` and per-item caches of one batch.
type BatchForward = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<ItemCache>);

impl Model {
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.msc.validate()?;
        spec.semantic.validate(spec.msc.n_out)?;
        spec.head.validate()?;
        let (mx, my) = spec.mode.sides();
        if mx == my && spec.x_channels != spec.y_channels {
            return Err(Error::Shape(format!(
                "single-modal pairs need equal channel counts, got {} and {}",
                spec.x_channels, spec.y_channels
            )));
        }
        let encoder = MscEncoder::new(spec.msc, &[(mx, spec.x_channels), (my, spec.y_channels)], rng)?;
        let stacks = if spec.semantic.share_weights { 1 } else { 2 };
        let semantic = (0..stacks)
            .map(|_| SemanticEncoder::new(spec.msc.n_scale, spec.msc.n_out, &spec.semantic, rng))
            .collect::<Result<Vec<_>>>()?;
        let head = FusionHead::new(spec.msc.embedding_dim(), &spec.head, rng);
        Ok(Model { spec, encoder, semantic, head })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> InputMode {
        self.spec.mode
    }

    fn sem_index(&self, side: usize) -> usize {
        if self.semantic.len() == 1 {
            0
        } else {
            side
        }
    }

    fn check_pair(&self, pair: &InputPair) -> Result<()> {
        let (mx, my) = self.spec.mode.sides();
        if pair.x.modality() != mx || pair.y.modality() != my {
            return Err(Error::Shape(format!(
                "pair {} has modalities ({}, {}), model expects ({mx}, {my})",
                pair.subject_id,
                pair.x.modality(),
                pair.y.modality()
            )));
        }
        Ok(())
    }

    fn forward_item(&self, pair: &InputPair, mut rng: Option<&mut Rng>) -> Result<ItemOut> {
        self.check_pair(pair)?;
        let (v, enc_x) = self.encoder.encode(&pair.x, rng.as_deref_mut())?;
        let (u, enc_y) = self.encoder.encode(&pair.y, rng.as_deref_mut())?;
        let (z_f, sem_x) = self.semantic[self.sem_index(0)].forward(&v, rng.as_deref_mut())?;
        let (z_e, sem_y) = self.semantic[self.sem_index(1)].forward(&u, rng.as_deref_mut())?;
        let (logits, head) = self.head.forward(&z_f, &z_e, rng)?;
        if !logits.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logits for {}", pair.subject_id)));
        }
        Ok(ItemOut {
            v,
            u,
            cache: ItemCache { enc_x, enc_y, sem_x, sem_y, head, z_f, z_e, logits, label: pair.label },
        })
    }

    fn forward_batch(
        &self,
        batch: &[InputPair],
        mut rng: Option<&mut Rng>,
    ) -> Result<BatchForward> {
        let mut vs = Vec::with_capacity(batch.len());
        let mut us = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        for pair in batch {
            let out = self.forward_item(pair, rng.as_deref_mut())?;
            vs.push(out.v);
            us.push(out.u);
            caches.push(out.cache);
        }
        Ok((vs, us, caches))
    }

    /// Batch objective without gradients. Dropout is active only when `rng`
    /// is given.
    pub fn loss(&self, batch: &[InputPair], rng: Option<&mut Rng>) -> Result<LossBreakdown> {
        let (vs, us, caches) = self.forward_batch(batch, rng)?;
        let msc = l_msc(&PairBatch::interleaved(&vs, &us, self.spec.msc.temperature)?)?;
        let n = batch.len() as f64;
        let focal = self.spec.head.focal();
        let mut sc = 0.0;
        let mut fl = 0.0;
        for c in &caches {
            sc += l_sc(&c.z_f, &c.z_e)?;
            fl += head::focal_from_logits(c.logits, c.label.index(), &focal)?.0;
        }
        let (sc, fl) = (sc / n, fl / n);
        Ok(LossBreakdown { total: head::total_loss(msc, sc, fl, &self.spec.head.weights()), msc, sc, fl })
    }

    /// Batch objective; parameter gradients are overwritten with its
    /// gradient.
    pub fn loss_and_grad(&mut self, batch: &[InputPair], rng: Option<&mut Rng>) -> Result<LossBreakdown> {
        self.zero_grad();
        let (vs, us, caches) = self.forward_batch(batch, rng)?;
        let n = batch.len();
        let w = self.spec.head.weights();
        let focal = self.spec.head.focal();

        let pairs = PairBatch::interleaved(&vs, &us, self.spec.msc.temperature)?;
        let (msc, dmsc) = l_msc_with_grad(&pairs)?;

        let mut sc = 0.0;
        let mut fl = 0.0;
        for (i, c) in caches.iter().enumerate() {
            let (l_sc_i, dzf_sc, dze_sc) = l_sc_with_grad(&c.z_f, &c.z_e)?;
            let (l_fl_i, dlogits) = head::focal_from_logits(c.logits, c.label.index(), &focal)?;
            sc += l_sc_i;
            fl += l_fl_i;
            let scale = 1.0 / n as f64;
            let (mut dzf, mut dze) = self.head.backward(&c.head, [dlogits[0] * scale, dlogits[1] * scale]);
            for (d, g) in dzf.iter_mut().zip(&dzf_sc) {
                *d += w.lambda2 * scale * g;
            }
            for (d, g) in dze.iter_mut().zip(&dze_sc) {
                *d += w.lambda2 * scale * g;
            }
            let ix = self.sem_index(0);
            let mut dv = self.semantic[ix].backward(&c.sem_x, &dzf);
            let iy = self.sem_index(1);
            let mut du = self.semantic[iy].backward(&c.sem_y, &dze);
            for (d, g) in dv.iter_mut().zip(&dmsc[2 * i]) {
                *d += w.lambda1 * g;
            }
            for (d, g) in du.iter_mut().zip(&dmsc[2 * i + 1]) {
                *d += w.lambda1 * g;
            }
            self.encoder.backward(&c.enc_x, &dv);
            self.encoder.backward(&c.enc_y, &du);
        }
        let (sc, fl) = (sc / n as f64, fl / n as f64);
        Ok(LossBreakdown { total: head::total_loss(msc, sc, fl, &w), msc, sc, fl })
    }

    /// Side of zero of every rectifier and leaky-max input over the batch,
    /// dropout disabled. Two parameter settings with equal patterns lie on
    /// the same smooth piece of the objective.
    pub fn kink_signs(&self, batch: &[InputPair]) -> Result<Vec<bool>> {
        let (_, _, caches) = self.forward_batch(batch, None)?;
        let mut out = Vec::new();
        for c in &caches {
            c.enc_x.kink_signs(&mut out);
            c.enc_y.kink_signs(&mut out);
            c.sem_x.kink_signs(&mut out);
            c.sem_y.kink_signs(&mut out);
            c.head.kink_signs(&mut out);
        }
        Ok(out)
    }

    pub fn embed(&self, pair: &InputPair) -> Result<Embeddings> {
        let out = self.forward_item(pair, None)?;
        Ok(Embeddings { v: out.v, u: out.u, z_f: out.cache.z_f, z_e: out.cache.z_e })
    }

    /// Class probabilities with dropout disabled.
    pub fn predict_proba(&self, pair: &InputPair) -> Result<[f64; 2]> {
        Ok(head::softmax2(self.forward_item(pair, None)?.cache.logits))
    }

    pub fn predict(&self, pair: &InputPair) -> Result<Label> {
        Ok(metrics::predict(self.predict_proba(pair)?))
    }

    pub fn evaluate(&self, pairs: &[InputPair]) -> Result<MetricsReport> {
        if pairs.is_empty() {
            return Err(Error::invalid("records", "cannot evaluate an empty record set"));
        }
        let truth: Vec<Label> = pairs.iter().map(|p| p.label).collect();
        let predicted = pairs.iter().map(|p| self.predict(p)).collect::<Result<Vec<_>>>()?;
        MetricsReport::from_predictions(&truth, &predicted)
    }

    /// Channel count the encoder expects for a modality.
    pub fn channels(&self, modality: Modality) -> Option<usize> {
        self.encoder.modalities().find(|(m, _)| *m == modality).map(|(_, c)| c)
    }
}

impl Parameters for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        if self.semantic.len() == 1 {
            self.semantic[0].visit(&join(prefix, "semantic"), f);
        } else {
            self.semantic[0].visit(&join(prefix, "semantic.x"), f);
            self.semantic[1].visit(&join(prefix, "semantic.y"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        if self.semantic.len() == 1 {
            self.semantic[0].visit_mut(&join(prefix, "semantic"), f);
        } else {
            self.semantic[0].visit_mut(&join(prefix, "semantic.x"), f);
            self.semantic[1].visit_mut(&join(prefix, "semantic.y"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
