//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check compares analytic gradients with central differences
//! `(f(x + h) - f(x - h)) / 2h` at `h = 1e-4` and reports the largest
//! relative error `|a - n| / max(|a|, |n|, floor)`. Large tensors are
//! checked on a seeded random subset of coordinates.
//!
//! The networks are piecewise smooth (rectifiers, leaky max). A probe whose
//! `x +- h` moves some rectifier input across zero measures the kink, not
//! the gradient, so such coordinates are detected from the activation
//! pattern, skipped and counted.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::{InputMode, InputPair};
use crate::config::ExperimentConfig;
use crate::contrastive::{l_msc, l_msc_with_grad, PairBatch};
use crate::encoder::{signal_matrix, MscEncoder};
use crate::error::{Error, Result};
use crate::head::{focal_from_logits, softmax2, FusionHead};
use crate::math;
use crate::model::Model;
use crate::nn::{Mat, Parameters};
use crate::rng::{self, stream, Rng};
use crate::semantic::{l_sc, l_sc_with_grad, MultiHeadAttention, SemanticEncoder, TransformerUnit};
use crate::signal::{Label, Modality, Signal};

pub const STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Coordinates compared.
    pub coords: usize,
    /// Coordinates skipped because the probe straddled a kink.
    pub kinks: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE && self.coords > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Items per batch for the batched checks (2 to 4).
    pub batch: usize,
    pub timesteps: usize,
    pub fnirs_channels: usize,
    pub eeg_channels: usize,
    /// Coordinates sampled per parameter tensor.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { batch: 3, timesteps: 16, fnirs_channels: 4, eeg_channels: 3, max_coords: 12, seed: 0 }
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    math::abs(a - n) / math::abs(a).max(math::abs(n)).max(REL_FLOOR)
}

/// A scalar objective and the activation pattern it was evaluated on.
type Probe = (f64, Vec<bool>);

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    worst: f64,
    coords: usize,
    kinks: usize,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally { worst: self.worst.max(o.worst), coords: self.coords + o.coords, kinks: self.kinks + o.kinks }
    }

    fn record(&mut self, analytic: f64, base: &[bool], plus: Probe, minus: Probe) {
        if plus.1 != base || minus.1 != base {
            self.kinks += 1;
            return;
        }
        self.worst = self.worst.max(rel_err(analytic, (plus.0 - minus.0) / (2.0 * STEP)));
        self.coords += 1;
    }

    fn named(self, name: &str) -> GradCheck {
        GradCheck { name: String::from(name), max_rel_err: self.worst, coords: self.coords, kinks: self.kinks }
    }
}

fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn coords(rng: &mut Rng, len: usize, cap: usize) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        let mut v = index::sample(rng, len, cap).into_vec();
        v.sort_unstable();
        v
    }
}

/// Apply `f` to the `flat`-th scalar of the model's parameters, counted in
/// traversal order.
fn with_param<M: Parameters + ?Sized, T>(m: &mut M, flat: usize, f: impl FnOnce(&mut f64) -> T) -> T {
    let mut f = Some(f);
    let mut out = None;
    let mut rest = flat;
    m.visit_mut("", &mut |_, p| {
        if out.is_some() {
            return;
        }
        if rest < p.len() {
            out = Some((f.take().unwrap())(&mut p.value[rest]));
        } else {
            rest -= p.len();
        }
    });
    out.expect("coordinate within parameter count")
}

/// Central differences over a sample of coordinates of every parameter
/// tensor, against the gradients left by `grad`.
fn check_params<M: Parameters>(
    m: &mut M,
    rng: &mut Rng,
    max_coords: usize,
    probe: &dyn Fn(&M) -> Result<Probe>,
    grad: &dyn Fn(&mut M) -> Result<()>,
) -> Result<Tally> {
    m.zero_grad();
    grad(m)?;
    let mut tensors: Vec<Vec<f64>> = Vec::new();
    m.visit("", &mut |_, p| tensors.push(p.grad.clone()));
    let base = probe(m)?.1;
    let mut tally = Tally::default();
    let mut offset = 0;
    for g in &tensors {
        for i in coords(rng, g.len(), max_coords) {
            let flat = offset + i;
            let orig = with_param(m, flat, |x| *x);
            with_param(m, flat, |x| *x = orig + STEP);
            let plus = probe(m)?;
            with_param(m, flat, |x| *x = orig - STEP);
            let minus = probe(m)?;
            with_param(m, flat, |x| *x = orig);
            tally.record(g[i], &base, plus, minus);
        }
        offset += g.len();
    }
    Ok(tally)
}

/// Central differences with respect to every coordinate of an input.
fn check_input(x: &[f64], analytic: &[f64], probe: &dyn Fn(&[f64]) -> Result<Probe>) -> Result<Tally> {
    let base = probe(x)?.1;
    let mut tally = Tally::default();
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + STEP;
        let plus = probe(&xp)?;
        xp[i] = x[i] - STEP;
        let minus = probe(&xp)?;
        xp[i] = x[i];
        tally.record(analytic[i], &base, plus, minus);
    }
    Ok(tally)
}

fn smooth(v: f64) -> Result<Probe> {
    Ok((v, Vec::new()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_signal(rng: &mut Rng, modality: Modality, channels: usize, t: usize) -> Result<Signal> {
    Signal::new(modality, gaussian(rng, channels * t), channels, 10.0, Signal::default_ids("C", channels))
}

fn check_encoder(cfg: &ExperimentConfig, o: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheck> {
    let mut enc = MscEncoder::new(
        cfg.model,
        &[(Modality::Fnirs, o.fnirs_channels), (Modality::Eeg, o.eeg_channels)],
        rng,
    )?;
    let sf = random_signal(rng, Modality::Fnirs, o.fnirs_channels, o.timesteps)?;
    let se = random_signal(rng, Modality::Eeg, o.eeg_channels, o.timesteps + 3)?;
    let r = gaussian(rng, cfg.model.embedding_dim());
    let readout = |e: &MscEncoder, signals: &[&Signal]| -> Result<Probe> {
        let mut total = 0.0;
        let mut signs = Vec::new();
        for s in signals {
            let (v, c) = e.encode::<Rng>(s, None)?;
            total += dot(&v, &r);
            c.kink_signs(&mut signs);
        }
        Ok((total, signs))
    };
    let params = check_params(&mut enc, rng, o.max_coords, &|e| readout(e, &[&sf, &se]), &|e| {
        for s in [&sf, &se] {
            let (_, c) = e.encode::<Rng>(s, None)?;
            e.backward(&c, &r);
        }
        Ok(())
    })?;
    let (_, c) = enc.encode::<Rng>(&sf, None)?;
    let dx = enc.clone().backward(&c, &r);
    let x = signal_matrix(&sf);
    let input = check_input(&x.data, &dx.data, &|xs| {
        let s = Signal::new(Modality::Fnirs, xs.to_vec(), o.fnirs_channels, 10.0, sf.channel_ids().to_vec())?;
        readout(&enc, &[&s])
    })?;
    Ok(params.merge(input).named("adapter+msc"))
}

fn check_attention(cfg: &ExperimentConfig, o: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheck> {
    let w = cfg.model.n_out;
    let s = cfg.model.n_scale;
    let mut attn = MultiHeadAttention::new(w, cfg.semantic.n_head, rng)?;
    let q = Mat::from_vec(s, w, gaussian(rng, s * w));
    let k = Mat::from_vec(s + 1, w, gaussian(rng, (s + 1) * w));
    let v = Mat::from_vec(s + 1, w, gaussian(rng, (s + 1) * w));
    let r = Mat::from_vec(s, w, gaussian(rng, s * w));
    let f = |a: &MultiHeadAttention, q: &Mat, k: &Mat, v: &Mat| -> Result<Probe> {
        smooth(dot(&a.forward(q, k, v)?.0.data, &r.data))
    };
    let params = check_params(&mut attn, rng, o.max_coords, &|a| f(a, &q, &k, &v), &|a| {
        let (_, c) = a.forward(&q, &k, &v)?;
        a.backward(&c, &r);
        Ok(())
    })?;
    let (_, c) = attn.forward(&q, &k, &v)?;
    let (dq, dk, dv) = attn.clone().backward(&c, &r);
    let iq = check_input(&q.data, &dq.data, &|x| f(&attn, &Mat::from_vec(q.rows, w, x.to_vec()), &k, &v))?;
    let ik = check_input(&k.data, &dk.data, &|x| f(&attn, &q, &Mat::from_vec(k.rows, w, x.to_vec()), &v))?;
    let iv = check_input(&v.data, &dv.data, &|x| f(&attn, &q, &k, &Mat::from_vec(v.rows, w, x.to_vec())))?;
    Ok(params.merge(iq).merge(ik).merge(iv).named("attention"))
}

fn check_unit(cfg: &ExperimentConfig, o: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheck> {
    let w = cfg.model.n_out;
    let s = cfg.model.n_scale;
    let mut unit = TransformerUnit::new(w, &cfg.semantic, rng)?;
    let h = Mat::from_vec(s, w, gaussian(rng, s * w));
    let r = Mat::from_vec(s, w, gaussian(rng, s * w));
    let f = |u: &TransformerUnit, h: &Mat| -> Result<Probe> {
        let (z, c) = u.forward::<Rng>(h, None)?;
        let mut signs = Vec::new();
        c.kink_signs(&mut signs);
        Ok((dot(&z.data, &r.data), signs))
    };
    let params = check_params(&mut unit, rng, o.max_coords, &|u| f(u, &h), &|u| {
        let (_, c) = u.forward::<Rng>(&h, None)?;
        u.backward(&c, &r);
        Ok(())
    })?;
    let (_, c) = unit.forward::<Rng>(&h, None)?;
    let dh = unit.clone().backward(&c, &r);
    let input = check_input(&h.data, &dh.data, &|x| f(&unit, &Mat::from_vec(s, w, x.to_vec())))?;
    Ok(params.merge(input).named("transformer_unit"))
}

fn check_semantic(cfg: &ExperimentConfig, o: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheck> {
    let m = cfg.model.embedding_dim();
    let mut sem = SemanticEncoder::new(cfg.model.n_scale, cfg.model.n_out, &cfg.semantic, rng)?;
    let v = gaussian(rng, m);
    let r = gaussian(rng, m);
    let f = |s: &SemanticEncoder, v: &[f64]| -> Result<Probe> {
        let (z, c) = s.forward::<Rng>(v, None)?;
        let mut signs = Vec::new();
        c.kink_signs(&mut signs);
        Ok((dot(&z, &r), signs))
    };
    let params = check_params(&mut sem, rng, o.max_coords, &|s| f(s, &v), &|s| {
        let (_, c) = s.forward::<Rng>(&v, None)?;
        s.backward(&c, &r);
        Ok(())
    })?;
    let (_, c) = sem.forward::<Rng>(&v, None)?;
    let dv = sem.clone().backward(&c, &r);
    let input = check_input(&v, &dv, &|x| f(&sem, x))?;
    Ok(params.merge(input).named("semantic_stack"))
}

fn check_head(cfg: &ExperimentConfig, o: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheck> {
    let m = cfg.model.embedding_dim();
    let mut head = FusionHead::new(m, &cfg.head, rng);
    let zf = gaussian(rng, m);
    let ze = gaussian(rng, m);
    let r: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
    let f = |h: &FusionHead, zf: &[f64], ze: &[f64]| -> Result<Probe> {
        let (logits, c) = h.forward::<Rng>(zf, ze, None)?;
        let p = softmax2(logits);
        let mut signs = Vec::new();
        c.kink_signs(&mut signs);
        Ok((p[0] * r[0] + p[1] * r[1], signs))
    };
    let dlogits = |h: &FusionHead| -> Result<[f64; 2]> {
        let p = softmax2(h.forward::<Rng>(&zf, &ze, None)?.0);
        let s = p[0] * r[0] + p[1] * r[1];
        Ok([p[0] * (r[0] - s), p[1] * (r[1] - s)])
    };
    let params = check_params(&mut head, rng, o.max_coords, &|h| f(h, &zf, &ze), &|h| {
        let d = dlogits(h)?;
        let (_, c) = h.forward::<Rng>(&zf, &ze, None)?;
        h.backward(&c, d);
        Ok(())
    })?;
    let d = dlogits(&head)?;
    let (_, c) = head.forward::<Rng>(&zf, &ze, None)?;
    let (dzf, dze) = head.clone().backward(&c, d);
    let a = check_input(&zf, &dzf, &|x| f(&head, x, &ze))?;
    let b = check_input(&ze, &dze, &|x| f(&head, &zf, x))?;
    Ok(params.merge(a).merge(b).named("fusion_head"))
}

fn check_l_msc(cfg: &ExperimentConfig, o: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheck> {
    let m = cfg.model.embedding_dim().min(16);
    let n = 2 * o.batch;
    let flat = gaussian(rng, n * m);
    let tau = cfg.model.temperature;
    let batch = |x: &[f64]| -> Result<PairBatch> {
        let items: Vec<Vec<f64>> = x.chunks(m).map(|c| c.to_vec()).collect();
        let positive = (0..n).map(|i| i ^ 1).collect();
        PairBatch::new(items, positive, tau)
    };
    let (_, g) = l_msc_with_grad(&batch(&flat)?)?;
    let g: Vec<f64> = g.into_iter().flatten().collect();
    Ok(check_input(&flat, &g, &|x| smooth(l_msc(&batch(x)?)?))?.named("l_msc"))
}

fn check_l_sc(cfg: &ExperimentConfig, rng: &mut Rng) -> Result<GradCheck> {
    let m = cfg.model.embedding_dim();
    let zf = gaussian(rng, m);
    let ze = gaussian(rng, m);
    let (_, gf, ge) = l_sc_with_grad(&zf, &ze)?;
    let a = check_input(&zf, &gf, &|x| smooth(l_sc(x, &ze)?))?;
    let b = check_input(&ze, &ge, &|x| smooth(l_sc(&zf, x)?))?;
    Ok(a.merge(b).named("l_sc"))
}

fn check_l_fl(cfg: &ExperimentConfig, rng: &mut Rng) -> Result<GradCheck> {
    let focal = cfg.head.focal();
    let mut tally = Tally::default();
    for label in 0..2 {
        for _ in 0..4 {
            let z = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let (_, g) = focal_from_logits(z, label, &focal)?;
            let t = check_input(&z, &g, &|x| smooth(focal_from_logits([x[0], x[1]], label, &focal)?.0))?;
            tally = tally.merge(t);
        }
    }
    Ok(tally.named("l_fl"))
}

fn check_objective(cfg: &ExperimentConfig, o: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheck> {
    let mode = cfg.train.mode;
    let channels = |m: Modality| match m {
        Modality::Fnirs => o.fnirs_channels,
        Modality::Eeg => o.eeg_channels,
    };
    let (mx, my) = mode.sides();
    let spec = cfg.model_spec(channels(mx), channels(my));
    let mut model = Model::new(spec, rng)?;
    let mut pairs = Vec::with_capacity(o.batch);
    for i in 0..o.batch {
        let x = random_signal(rng, mx, channels(mx), o.timesteps)?;
        let y = match mode {
            InputMode::Multi => random_signal(rng, my, channels(my), o.timesteps + 4)?,
            _ => {
                let noise = gaussian(rng, x.data().len());
                x.with_data(x.data().iter().zip(&noise).map(|(v, e)| v + 0.3 * e).collect())
            }
        };
        let label = if i % 2 == 0 { Label::Control } else { Label::Depressed };
        pairs.push(InputPair { subject_id: alloc::format!("G{i}"), x, y, label });
    }
    let t = check_params(
        &mut model,
        rng,
        o.max_coords,
        &|m| Ok((m.loss(&pairs, None)?.total, m.kink_signs(&pairs)?)),
        &|m| m.loss_and_grad(&pairs, None).map(|_| ()),
    )?;
    Ok(t.named("objective"))
}

/// Every check on the architecture of `cfg`, with dropout disabled.
pub fn run_all(cfg: &ExperimentConfig, o: &GradCheckOptions) -> Result<Vec<GradCheck>> {
    if !(2..=4).contains(&o.batch) {
        return Err(Error::invalid("batch", "gradient checks use batches of 2 to 4 items"));
    }
    let mut cfg = cfg.clone();
    cfg.model.dropout = 0.0;
    cfg.semantic.dropout = 0.0;
    cfg.head.dropout = 0.0;
    cfg.validate()?;
    let rng = |k: u64| rng::derived(o.seed, stream::GRADCHECK, k);
    Ok(alloc::vec![
        check_encoder(&cfg, o, &mut rng(0))?,
        check_attention(&cfg, o, &mut rng(1))?,
        check_unit(&cfg, o, &mut rng(2))?,
        check_semantic(&cfg, o, &mut rng(3))?,
        check_head(&cfg, o, &mut rng(4))?,
        check_l_msc(&cfg, o, &mut rng(5))?,
        check_l_sc(&cfg, &mut rng(6))?,
        check_l_fl(&cfg, &mut rng(7))?,
        check_objective(&cfg, o, &mut rng(8))?,
    ])
}
