//! The experiment configuration document: one section per pipeline stage.
//! Unknown keys are rejected and every omitted field takes its default.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentSpec, InputMode};
use crate::encoder::MscConfig;
use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::model::ModelSpec;
use crate::preprocess::{Extinction, FilterSpec};
use crate::semantic::TransformerConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Channels kept from fNIRS signals, in order; all when absent.
    pub fnirs_channels: Option<Vec<String>>,
    pub eeg_channels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Common sampling rate both modalities are resampled to, Hz.
    pub fs_common: f64,
    /// Band-pass applied to fNIRS before resampling; skipped when null.
    pub fnirs_filter: Option<FilterSpec>,
    pub eeg_filter: Option<FilterSpec>,
    pub extinction: Extinction,
    /// Differential pathlength factors at 690 nm and 830 nm.
    pub dpf: [f64; 2],
    pub distance_cm: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            fs_common: 100.0,
            fnirs_filter: Some(FilterSpec { low_hz: 0.01, high_hz: 0.08, taps: 8001 }),
            eeg_filter: Some(FilterSpec { low_hz: 1.0, high_hz: 40.0, taps: 1001 }),
            extinction: Extinction::default(),
            dpf: [6.0, 6.0],
            distance_cm: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation F1 improvement.
    pub patience: usize,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub seed: u64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub mode: InputMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs: 100,
            patience: 20,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            seed: 0,
            split: [0.7, 0.15, 0.15],
            mode: InputMode::Multi,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("train.lr", "learning rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("train.batch_size", "contrastive loss needs at least 2 pairs per batch"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train.epochs", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::invalid("train.rms_decay", "must lie in [0, 1)"));
        }
        if !(self.rms_eps > 0.0) {
            return Err(Error::invalid("train.rms_eps", "must be positive"));
        }
        if self.split.iter().any(|f| !(*f > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("train.split", "fractions must be positive and sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentSpec,
    pub model: MscConfig,
    pub semantic: TransformerConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.preprocess.fs_common > 0.0) || !self.preprocess.fs_common.is_finite() {
            return Err(Error::invalid("preprocess.fs_common", "must be positive"));
        }
        for (name, f) in [("preprocess.fnirs_filter", &self.preprocess.fnirs_filter), ("preprocess.eeg_filter", &self.preprocess.eeg_filter)] {
            if let Some(f) = f {
                if !(f.low_hz > 0.0 && f.low_hz < f.high_hz) {
                    return Err(Error::invalid(name, "need 0 < low_hz < high_hz"));
                }
                if f.taps < 31 || f.taps % 2 == 0 {
                    return Err(Error::invalid(name, "taps must be odd and at least 31"));
                }
            }
        }
        if self.preprocess.dpf.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("preprocess.dpf", "must be positive"));
        }
        if !(self.preprocess.distance_cm > 0.0) {
            return Err(Error::invalid("preprocess.distance_cm", "must be positive"));
        }
        for (name, ids) in [("data.fnirs_channels", &self.data.fnirs_channels), ("data.eeg_channels", &self.data.eeg_channels)] {
            if ids.as_ref().is_some_and(|v| v.is_empty()) {
                return Err(Error::invalid(name, "empty channel selection"));
            }
        }
        self.augment.validate()?;
        self.model.validate()?;
        self.semantic.validate(self.model.n_out)?;
        self.head.validate()?;
        self.train.validate()
    }

    pub fn model_spec(&self, x_channels: usize, y_channels: usize) -> ModelSpec {
        ModelSpec {
            mode: self.train.mode,
            x_channels,
            y_channels,
            msc: self.model,
            semantic: self.semantic,
            head: self.head,
        }
    }
}
