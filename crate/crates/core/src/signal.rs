//! Data model for multichannel physiological recordings.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "FNIRS")]
    Fnirs,
    #[serde(rename = "EEG")]
    Eeg,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Fnirs, Modality::Eeg];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Fnirs => "FNIRS",
            Modality::Eeg => "EEG",
        }
    }

    /// Lower-case tag used in file names.
    pub fn file_tag(self) -> &'static str {
        match self {
            Modality::Fnirs => "fnirs",
            Modality::Eeg => "eeg",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Diagnostic class. The numeric value is the class index used by the
/// classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "CONTROL")]
    Control = 0,
    #[serde(rename = "DEPRESSED")]
    Depressed = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Control
        } else {
            Label::Depressed
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Control => "CONTROL",
            Label::Depressed => "DEPRESSED",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One modality's recording: `channels x timesteps`, row-major.
///
/// Samples are kept in `f64` for processing; the on-disk format stores
/// `f32`, so data produced by the synthetic generator is already rounded to
/// `f32` precision and round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    modality: Modality,
    data: Vec<f64>,
    channels: usize,
    timesteps: usize,
    fs: f64,
    channel_ids: Vec<String>,
}

impl Signal {
    pub fn new(
        modality: Modality,
        data: Vec<f64>,
        channels: usize,
        fs: f64,
        channel_ids: Vec<String>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("channels", "at least one channel required"));
        }
        if data.is_empty() || !data.len().is_multiple_of(channels) {
            return Err(Error::Shape(format!(
                "{} samples do not form {} non-empty channels",
                data.len(),
                channels
            )));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid("fs", format!("sampling rate must be positive, got {fs}")));
        }
        if channel_ids.len() != channels {
            return Err(Error::Shape(format!(
                "{} channel ids for {} channels",
                channel_ids.len(),
                channels
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite sample at channel {}, t={}",
                pos / (data.len() / channels),
                pos % (data.len() / channels)
            )));
        }
        let timesteps = data.len() / channels;
        Ok(Signal { modality, data, channels, timesteps, fs, channel_ids })
    }

    /// Channel ids `"<prefix>1" .. "<prefix>n"`.
    pub fn default_ids(prefix: &str, n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn duration(&self) -> f64 {
        self.timesteps as f64 / self.fs
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.timesteps..(c + 1) * self.timesteps]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.timesteps)
    }

    /// Same metadata with new sample data of the same shape.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Signal {
        debug_assert_eq!(data.len(), self.data.len());
        Signal { data, ..self.clone() }
    }

    /// Same channels, new timeline.
    pub(crate) fn with_timeline(&self, data: Vec<f64>, fs: f64) -> Signal {
        debug_assert_eq!(data.len() % self.channels, 0);
        Signal {
            timesteps: data.len() / self.channels,
            data,
            fs,
            ..self.clone()
        }
    }
}

/// Timing of the stimulation task. Questions occupy consecutive windows of
/// length `t_q` starting at `onset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMeta {
    /// Length of the whole recording in seconds.
    pub total_duration: f64,
    pub question_count: usize,
    /// Response time per question, in seconds.
    pub t_q: f64,
    /// Start of the first question (end of the pre-task silence), seconds.
    #[serde(default)]
    pub onset: f64,
}

impl TaskMeta {
    pub fn validate(&self) -> Result<()> {
        if self.question_count == 0 {
            return Err(Error::invalid("task.question_count", "must be at least 1"));
        }
        if !(self.t_q > 0.0) {
            return Err(Error::invalid("task.t_q", "must be positive"));
        }
        if !(self.onset >= 0.0) {
            return Err(Error::invalid("task.onset", "must be non-negative"));
        }
        if self.onset + self.question_count as f64 * self.t_q > self.total_duration + 1e-9 {
            return Err(Error::invalid(
                "task.t_q",
                "question windows extend past total_duration",
            ));
        }
        Ok(())
    }

    /// `[start, end)` of question `k` in seconds.
    pub fn question_window(&self, k: usize) -> (f64, f64) {
        let start = self.onset + k as f64 * self.t_q;
        (start, start + self.t_q)
    }

    /// `[start, end)` of the whole task period in seconds.
    pub fn task_window(&self) -> (f64, f64) {
        (self.onset, self.onset + self.question_count as f64 * self.t_q)
    }
}

/// A labeled subject with one or both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub subject_id: String,
    pub label: Label,
    pub signals: BTreeMap<Modality, Signal>,
    pub task: TaskMeta,
}

impl Record {
    pub fn new(
        subject_id: impl Into<String>,
        label: Label,
        signals: Vec<Signal>,
        task: TaskMeta,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        let mut map = BTreeMap::new();
        for s in signals {
            if map.insert(s.modality(), s).is_some() {
                return Err(Error::invalid(
                    "signals",
                    format!("duplicate modality in record {subject_id}"),
                ));
            }
        }
        let record = Record { subject_id, label, signals: map, task };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.signals.is_empty() {
            return Err(Error::invalid(
                "signals",
                format!("record {} has no modality", self.subject_id),
            ));
        }
        self.task.validate()?;
        for (m, s) in &self.signals {
            if *m != s.modality() {
                return Err(Error::invalid("signals", "modality key does not match signal"));
            }
        }
        Ok(())
    }

    pub fn signal(&self, modality: Modality) -> Result<&Signal> {
        self.signals.get(&modality).ok_or_else(|| Error::MissingModality {
            subject: self.subject_id.clone(),
            modality: modality.name().into(),
        })
    }
}
