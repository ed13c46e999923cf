//! Time-domain augmentation bounded by the per-question response time, and
//! assembly of `(x, y)` input pairs.
//!
//! Both augmentations pick one question window `k`, an offset
//! `t_0 in [0, t_q - w)` and a width `w in (0, lambda]`, so the touched span
//! always lies inside a single question.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, stream};
use crate::signal::{Label, Modality, Record, Signal, TaskMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentMethod {
    #[serde(rename = "MASK")]
    Mask,
    #[serde(rename = "WARP")]
    Warp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub method: AugmentMethod,
    /// Upper bound on the augmented segment width, seconds.
    pub lambda_s: f64,
    pub warp_factor_range: [f64; 2],
    /// Chance that each side of a multimodal pair is augmented.
    pub probability: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            method: AugmentMethod::Mask,
            lambda_s: 5.0,
            warp_factor_range: [0.8, 1.25],
            probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s > 0.0) {
            return Err(Error::invalid("augment.lambda_s", "must be positive"));
        }
        let [lo, hi] = self.warp_factor_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("augment.warp_factor_range", "need 0 < lo <= hi"));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::invalid("augment.probability", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn validate_for(&self, task: &TaskMeta) -> Result<()> {
        self.validate()?;
        if self.lambda_s > task.t_q {
            return Err(Error::invalid(
                "augment.lambda_s",
                alloc::format!("{} s exceeds the question time t_q = {} s", self.lambda_s, task.t_q),
            ));
        }
        Ok(())
    }
}

/// The span an augmentation touched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentWindow {
    pub question: usize,
    /// Offset of the segment inside its question window, seconds.
    pub t0: f64,
    /// Drawn width `t_tm` / `t_tw`, seconds.
    pub width: f64,
    /// First affected sample.
    pub start: usize,
    /// Number of affected samples.
    pub len: usize,
    /// Warp factor (1 for masking).
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub signal: Signal,
    pub window: AugmentWindow,
}

fn check_coverage(signal: &Signal, task: &TaskMeta) -> Result<()> {
    let (_, end) = task.task_window();
    if signal.duration() + 1e-9 < end {
        return Err(Error::invalid(
            "task",
            alloc::format!(
                "signal lasts {} s but the task runs until {} s",
                signal.duration(),
                end
            ),
        ));
    }
    Ok(())
}

fn draw_window<R: Rng + ?Sized>(
    signal: &Signal,
    task: &TaskMeta,
    spec: &AugmentSpec,
    rng: &mut R,
) -> AugmentWindow {
    let question = rng.random_range(0..task.question_count);
    // (0, lambda]
    let width = spec.lambda_s * (1.0 - rng.random::<f64>());
    let slack = task.t_q - width;
    let t0 = if slack > 0.0 { rng.random_range(0.0..slack) } else { 0.0 };

    let fs = signal.fs();
    let n = signal.timesteps();
    let (q_start, q_end) = task.question_window(question);
    let q_first = (math::round(q_start * fs) as usize).min(n - 1);
    let q_stop = (math::round(q_end * fs) as usize).clamp(q_first + 1, n);
    let start = (math::round((q_start + t0) * fs) as usize).clamp(q_first, q_stop - 1);
    let len = (math::round(width * fs) as usize).max(1).min(q_stop - start);
    AugmentWindow { question, t0, width, start, len, factor: 1.0 }
}

/// Replace a drawn segment (all channels) with each channel's mean over the
/// unmasked samples.
pub fn time_mask<R: Rng + ?Sized>(
    signal: &Signal,
    task: &TaskMeta,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<Augmented> {
    spec.validate_for(task)?;
    check_coverage(signal, task)?;
    let window = draw_window(signal, task, spec, rng);
    let masked = window.start..window.start + window.len;
    let n = signal.timesteps();
    let mut data = signal.data().to_vec();
    for row in data.chunks_exact_mut(n) {
        let kept = n - window.len;
        let fill = if kept == 0 {
            0.0
        } else {
            let total: f64 = row[..masked.start].iter().chain(&row[masked.end..]).sum();
            total / kept as f64
        };
        row[masked.clone()].fill(fill);
    }
    Ok(Augmented { signal: signal.with_data(data), window })
}

/// Piecewise-linear time map of a warp: segment `[start, start + len]`
/// (sample units) is stretched by `factor`, then the whole timeline is
/// rescaled back to `n` samples. Maps an output index to a fractional
/// source index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpMap {
    n: usize,
    start: f64,
    len: f64,
    factor: f64,
}

impl WarpMap {
    pub fn new(n: usize, start: usize, len: usize, factor: f64) -> Self {
        WarpMap { n, start: start as f64, len: len as f64, factor }
    }

    pub fn source_position(&self, i: f64) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let span = (self.n - 1) as f64;
        let warped_span = span - self.len + self.len * self.factor;
        let q = i * warped_span / span;
        let stretched_end = self.start + self.len * self.factor;
        let src = if q <= self.start {
            q
        } else if q <= stretched_end {
            self.start + (q - self.start) / self.factor
        } else {
            q - self.len * self.factor + self.len
        };
        src.clamp(0.0, span)
    }
}

fn lerp_at(row: &[f64], pos: f64) -> f64 {
    let i = math::floor(pos) as usize;
    if i + 1 >= row.len() {
        return row[row.len() - 1];
    }
    let frac = pos - i as f64;
    if frac == 0.0 {
        row[i]
    } else {
        row[i] * (1.0 - frac) + row[i + 1] * frac
    }
}

/// Locally re-time a drawn segment by a factor in `warp_factor_range`,
/// keeping the original length and time scale.
pub fn time_warp<R: Rng + ?Sized>(
    signal: &Signal,
    task: &TaskMeta,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<Augmented> {
    spec.validate_for(task)?;
    check_coverage(signal, task)?;
    let mut window = draw_window(signal, task, spec, rng);
    let [lo, hi] = spec.warp_factor_range;
    window.factor = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let n = signal.timesteps();
    let map = WarpMap::new(n, window.start, window.len, window.factor);
    let positions: Vec<f64> = (0..n).map(|i| map.source_position(i as f64)).collect();
    let data: Vec<f64> = signal
        .rows()
        .flat_map(|row| positions.iter().map(move |&p| lerp_at(row, p)))
        .collect();
    Ok(Augmented { signal: signal.with_data(data), window })
}

pub fn augment<R: Rng + ?Sized>(
    signal: &Signal,
    task: &TaskMeta,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<Augmented> {
    match spec.method {
        AugmentMethod::Mask => time_mask(signal, task, spec, rng),
        AugmentMethod::Warp => time_warp(signal, task, spec, rng),
    }
}

/// Which signals form the `(x, y)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    #[serde(rename = "SINGLE_FNIRS")]
    SingleFnirs,
    #[serde(rename = "SINGLE_EEG")]
    SingleEeg,
    #[serde(rename = "MULTI")]
    Multi,
}

impl InputMode {
    /// Modalities feeding the x and y sides.
    pub fn sides(self) -> (Modality, Modality) {
        match self {
            InputMode::SingleFnirs => (Modality::Fnirs, Modality::Fnirs),
            InputMode::SingleEeg => (Modality::Eeg, Modality::Eeg),
            InputMode::Multi => (Modality::Fnirs, Modality::Eeg),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputMode::SingleFnirs => "SINGLE_FNIRS",
            InputMode::SingleEeg => "SINGLE_EEG",
            InputMode::Multi => "MULTI",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputPair {
    pub subject_id: String,
    pub x: Signal,
    pub y: Signal,
    pub label: Label,
}

/// Training pairs. Single-modal modes pair the raw signal with an augmented
/// copy; multimodal mode pairs fNIRS with EEG and augments each side with
/// `spec.probability`. Record `i` in round `round` draws from its own
/// stream, so the output does not depend on processing order.
pub fn build_input_pairs(
    records: &[Record],
    mode: InputMode,
    spec: &AugmentSpec,
    round: u64,
) -> Result<Vec<InputPair>> {
    spec.validate()?;
    let round_seed = rng::derive_seed(spec.seed, stream::AUGMENT, round);
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut rng = rng::derived(round_seed, stream::AUGMENT, i as u64);
            let (mx, my) = mode.sides();
            let sx = rec.signal(mx)?;
            let sy = rec.signal(my)?;
            let (x, y) = match mode {
                InputMode::SingleFnirs | InputMode::SingleEeg => {
                    (sx.clone(), augment(sx, &rec.task, spec, &mut rng)?.signal)
                }
                InputMode::Multi => {
                    let mut side = |s: &Signal| -> Result<Signal> {
                        if rng.random::<f64>() < spec.probability {
                            Ok(augment(s, &rec.task, spec, &mut rng)?.signal)
                        } else {
                            Ok(s.clone())
                        }
                    };
                    let x = side(sx)?;
                    let y = side(sy)?;
                    (x, y)
                }
            };
            Ok(InputPair { subject_id: rec.subject_id.clone(), x, y, label: rec.label })
        })
        .collect()
}

/// Unaugmented pairs for evaluation: raw `(x, y)` in multimodal mode, the
/// raw signal on both sides in single-modal modes.
pub fn eval_pairs(records: &[Record], mode: InputMode) -> Result<Vec<InputPair>> {
    let (mx, my) = mode.sides();
    records
        .iter()
        .map(|rec| {
            Ok(InputPair {
                subject_id: rec.subject_id.clone(),
                x: rec.signal(mx)?.clone(),
                y: rec.signal(my)?.clone(),
                label: rec.label,
            })
        })
        .collect()
}
