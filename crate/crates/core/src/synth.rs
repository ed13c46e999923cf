//! Class-separable synthetic fNIRS/EEG generator.
//!
//! FNIRS-like channels are the task boxcar convolved with a
//! difference-of-gammas hemodynamic kernel, scaled by the class gain. EEG-like
//! channels are a few band-limited sinusoids whose envelope rises during the
//! task by the class gain. Both get white Gaussian noise. Each record draws
//! from its own stream keyed by `(seed, record index)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, stream};
use crate::signal::{Label, Modality, Record, Signal, TaskMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub channels: usize,
    pub fs: f64,
}

/// Response amplitude per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGains {
    #[serde(rename = "CONTROL")]
    pub control: f64,
    #[serde(rename = "DEPRESSED")]
    pub depressed: f64,
}

impl ClassGains {
    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Control => self.control,
            Label::Depressed => self.depressed,
        }
    }
}

/// Difference-of-gammas response: `g(t; peak) - ratio * g(t; undershoot)`
/// where `g(t; p)` is a unit-scale gamma density with its mode at `p`
/// seconds. Normalized to unit sum so a sustained task saturates at the gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseKernel {
    pub peak_s: f64,
    pub undershoot_s: f64,
    pub undershoot_ratio: f64,
    pub length_s: f64,
}

impl Default for ResponseKernel {
    fn default() -> Self {
        ResponseKernel { peak_s: 6.0, undershoot_s: 16.0, undershoot_ratio: 1.0 / 6.0, length_s: 32.0 }
    }
}

impl ResponseKernel {
    fn gamma_density(t: f64, mode: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let shape = mode + 1.0;
        math::exp((shape - 1.0) * math::ln(t) - t - libm::lgamma(shape))
    }

    pub fn sample(&self, fs: f64) -> Vec<f64> {
        let n = math::ceil(self.length_s * fs).max(1.0) as usize;
        let mut h: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                Self::gamma_density(t, self.peak_s)
                    - self.undershoot_ratio * Self::gamma_density(t, self.undershoot_s)
            })
            .collect();
        let sum: f64 = h.iter().sum();
        if sum != 0.0 {
            h.iter_mut().for_each(|x| *x /= sum);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_records: usize,
    pub fnirs: Option<ModalitySpec>,
    pub eeg: Option<ModalitySpec>,
    pub duration_s: f64,
    pub onset_s: f64,
    pub question_count: usize,
    pub t_q: f64,
    /// Fraction of DEPRESSED records.
    pub class_ratio: f64,
    pub activation_gain: ClassGains,
    pub noise_sd: f64,
    /// Frequency band of the EEG-like oscillations.
    pub eeg_band_hz: [f64; 2],
    /// Oscillation amplitude outside the task, relative to unit gain.
    pub eeg_rest_amplitude: f64,
    pub kernel: ResponseKernel,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_records: 200,
            fnirs: Some(ModalitySpec { channels: 8, fs: 10.0 }),
            eeg: Some(ModalitySpec { channels: 8, fs: 100.0 }),
            duration_s: 150.0,
            onset_s: 30.0,
            question_count: 3,
            t_q: 20.0,
            class_ratio: 0.2,
            activation_gain: ClassGains { control: 1.0, depressed: 0.4 },
            noise_sd: 0.1,
            eeg_band_hz: [8.0, 12.0],
            eeg_rest_amplitude: 0.5,
            kernel: ResponseKernel::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn task(&self) -> TaskMeta {
        TaskMeta {
            total_duration: self.duration_s,
            question_count: self.question_count,
            t_q: self.t_q,
            onset: self.onset_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(Error::invalid("n_records", "must be at least 1"));
        }
        if self.fnirs.is_none() && self.eeg.is_none() {
            return Err(Error::invalid("fnirs", "at least one of fnirs/eeg must be configured"));
        }
        for (name, m) in [("fnirs", self.fnirs), ("eeg", self.eeg)] {
            if let Some(m) = m {
                if m.channels == 0 {
                    return Err(Error::invalid(format!("{name}.channels"), "must be at least 1"));
                }
                if !(m.fs > 0.0) {
                    return Err(Error::invalid(format!("{name}.fs"), "must be positive"));
                }
                if m.fs * self.duration_s < 1.0 {
                    return Err(Error::invalid(format!("{name}.fs"), "record would be empty"));
                }
            }
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::invalid("duration_s", "must be positive"));
        }
        self.task().validate()?;
        if !(self.class_ratio > 0.0 && self.class_ratio < 1.0) {
            return Err(Error::invalid("class_ratio", "must lie strictly between 0 and 1"));
        }
        let g = self.activation_gain;
        if !(g.control > 0.0 && g.depressed > 0.0) {
            return Err(Error::invalid("activation_gain", "gains must be positive"));
        }
        if g.control == g.depressed {
            return Err(Error::invalid("activation_gain", "gains must differ between labels"));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::invalid("noise_sd", "must be positive"));
        }
        if !(self.eeg_rest_amplitude >= 0.0) {
            return Err(Error::invalid("eeg_rest_amplitude", "must be non-negative"));
        }
        if let Some(eeg) = self.eeg {
            let [lo, hi] = self.eeg_band_hz;
            if !(lo > 0.0 && lo < hi && hi < eeg.fs / 2.0) {
                return Err(Error::invalid("eeg_band_hz", "need 0 < lo < hi < fs/2"));
            }
        }
        let k = self.kernel;
        if !(k.peak_s > 0.0 && k.undershoot_s > 0.0 && k.length_s > 0.0 && k.undershoot_ratio >= 0.0)
        {
            return Err(Error::invalid("kernel", "kernel times must be positive"));
        }
        Ok(())
    }

    /// Number of DEPRESSED records the generator emits.
    pub fn depressed_count(&self) -> usize {
        let n = math::round(self.n_records as f64 * self.class_ratio) as usize;
        n.min(self.n_records)
    }
}

fn boxcar(task: &TaskMeta, fs: f64, n: usize) -> Vec<f64> {
    let (start, end) = task.task_window();
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            if t >= start && t < end {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn fnirs_channels(spec: &SynthSpec, m: ModalitySpec, gain: f64, rng: &mut rng::Rng) -> Signal {
    let n = math::round(spec.duration_s * m.fs) as usize;
    let task = spec.task();
    let stim = boxcar(&task, m.fs, n);
    let h = spec.kernel.sample(m.fs);
    let response: Vec<f64> = (0..n)
        .map(|t| {
            let kmax = h.len().min(t + 1);
            (0..kmax).map(|k| stim[t - k] * h[k]).sum()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise_sd");
    let mut data = Vec::with_capacity(n * m.channels);
    for _ in 0..m.channels {
        let weight = rng.random_range(0.7..1.3);
        for r in &response {
            let x = gain * weight * r + noise.sample(rng);
            data.push(math::to_f32_precision(x));
        }
    }
    Signal::new(Modality::Fnirs, data, m.channels, m.fs, Signal::default_ids("F", m.channels))
        .expect("generator emits a valid signal")
}

fn eeg_channels(spec: &SynthSpec, m: ModalitySpec, gain: f64, rng: &mut rng::Rng) -> Signal {
    const COMPONENTS: usize = 3;
    let n = math::round(spec.duration_s * m.fs) as usize;
    let task = spec.task();
    let stim = boxcar(&task, m.fs, n);
    let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise_sd");
    let [lo, hi] = spec.eeg_band_hz;
    let norm = math::sqrt(2.0 / COMPONENTS as f64);
    let mut data = Vec::with_capacity(n * m.channels);
    for _ in 0..m.channels {
        let weight = rng.random_range(0.7..1.3);
        let comps: Vec<(f64, f64)> = (0..COMPONENTS)
            .map(|_| (rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI)))
            .collect();
        for (i, s) in stim.iter().enumerate() {
            let t = i as f64 / m.fs;
            let osc: f64 = comps.iter().map(|&(f, ph)| math::sin(2.0 * PI * f * t + ph)).sum();
            let envelope = weight * (spec.eeg_rest_amplitude + gain * s);
            let x = envelope * norm * osc + noise.sample(rng);
            data.push(math::to_f32_precision(x));
        }
    }
    Signal::new(Modality::Eeg, data, m.channels, m.fs, Signal::default_ids("E", m.channels))
        .expect("generator emits a valid signal")
}

/// Generate one record. Depends only on the spec, the record index and its
/// label.
pub fn synth_record(spec: &SynthSpec, index: usize, label: Label) -> Record {
    let mut rng = rng::derived(spec.seed, stream::SYNTH_RECORD, index as u64);
    let gain = spec.activation_gain.get(label);
    let mut signals = Vec::new();
    if let Some(m) = spec.fnirs {
        signals.push(fnirs_channels(spec, m, gain, &mut rng));
    }
    if let Some(m) = spec.eeg {
        signals.push(eeg_channels(spec, m, gain, &mut rng));
    }
    Record::new(format!("S{index:03}"), label, signals, spec.task())
        .expect("generator emits a valid record")
}

/// Label assignment: exactly `round(n * class_ratio)` DEPRESSED records at
/// seeded positions.
pub fn synth_labels(spec: &SynthSpec) -> Vec<Label> {
    let n_dep = spec.depressed_count();
    let mut labels = vec![Label::Control; spec.n_records];
    labels[..n_dep].fill(Label::Depressed);
    labels.shuffle(&mut rng::derived(spec.seed, stream::SYNTH_LABELS, 0));
    labels
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<Record>> {
    spec.validate()?;
    Ok(synth_labels(spec)
        .into_iter()
        .enumerate()
        .map(|(i, label)| synth_record(spec, i, label))
        .collect())
}
