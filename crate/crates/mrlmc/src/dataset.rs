//! On-disk dataset: `manifest.json` plus, per signal, `<subject>_<tag>.f32`
//! (little-endian `f32`, channels x timesteps row-major) and a
//! `<subject>_<tag>.json` sidecar.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use mrlmc_core::math::to_f32_precision;
use mrlmc_core::synth::SynthSpec;
use mrlmc_core::{Label, Modality, Record, Signal, TaskMeta};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{read_json, write_json};

pub const MANIFEST: &str = "manifest.json";

/// Serializes manifest read-modify-write cycles within the process.
static MANIFEST_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub modality: Modality,
    /// `[channels, timesteps]`.
    pub shape: [usize; 2],
    pub fs: f64,
    pub channel_ids: Vec<String>,
    pub label: Label,
    pub subject_id: String,
    pub task: TaskMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalFiles {
    pub modality: Modality,
    pub data: String,
    pub sidecar: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub label: Label,
    pub signals: Vec<SignalFiles>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Generator settings when the records are synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthSpec>,
    #[serde(default)]
    pub records: Vec<ManifestEntry>,
}

/// Start a dataset directory with an empty manifest.
pub fn create(dir: &Path, generator: Option<SynthSpec>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_json(&dir.join(MANIFEST), &Manifest { generator, records: Vec::new() })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST))
}

fn check_subject_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CliError::Format(format!("subject id {id:?} is not usable as a file name")))
    }
}

fn encode_f32(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect()
}

/// Write the record's signal files and append it to the manifest.
/// Files are write-once per subject, so distinct records may be saved from
/// several threads.
pub fn save_record(record: &Record, dir: &Path) -> Result<ManifestEntry> {
    check_subject_id(&record.subject_id)?;
    let mut signals = Vec::new();
    for (m, s) in &record.signals {
        let stem = format!("{}_{}", record.subject_id, m.file_tag());
        let files = SignalFiles { modality: *m, data: format!("{stem}.f32"), sidecar: format!("{stem}.json") };
        let data_path = dir.join(&files.data);
        fs::write(&data_path, encode_f32(s.data())).map_err(|e| CliError::io(&data_path, e))?;
        let sidecar = Sidecar {
            modality: *m,
            shape: [s.channels(), s.timesteps()],
            fs: s.fs(),
            channel_ids: s.channel_ids().to_vec(),
            label: record.label,
            subject_id: record.subject_id.clone(),
            task: record.task,
        };
        write_json(&dir.join(&files.sidecar), &sidecar)?;
        signals.push(files);
    }
    let entry = ManifestEntry { subject_id: record.subject_id.clone(), label: record.label, signals };

    let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut manifest = match read_manifest(dir) {
        Err(CliError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
        other => other?,
    };
    if manifest.records.iter().any(|r| r.subject_id == entry.subject_id) {
        return Err(CliError::Format(format!("subject {} is already in the manifest", entry.subject_id)));
    }
    manifest.records.push(entry.clone());
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(entry)
}

/// A new dataset directory holding `records` in order.
pub fn save_dataset(records: &[Record], dir: &Path, generator: Option<SynthSpec>) -> Result<()> {
    create(dir, generator)?;
    for r in records {
        save_record(r, dir)?;
    }
    Ok(())
}

fn load_signal(dir: &Path, entry: &ManifestEntry, files: &SignalFiles) -> Result<(Signal, Sidecar)> {
    let side: Sidecar = read_json(&dir.join(&files.sidecar))?;
    if side.modality != files.modality || side.subject_id != entry.subject_id || side.label != entry.label {
        return Err(CliError::Format(format!(
            "sidecar {} disagrees with the manifest entry of {}",
            files.sidecar, entry.subject_id
        )));
    }
    let path = dir.join(&files.data);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let [channels, timesteps] = side.shape;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != channels * timesteps {
        return Err(CliError::Format(format!(
            "shape mismatch in record {}: sidecar {} declares [{channels}, {timesteps}] but {} holds {} bytes",
            entry.subject_id,
            files.sidecar,
            files.data,
            bytes.len()
        )));
    }
    let data = decode_f32(&bytes);
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Format(format!(
            "corrupt signal in record {}: non-finite values in {}",
            entry.subject_id, files.data
        )));
    }
    let signal = Signal::new(side.modality, data, channels, side.fs, side.channel_ids.clone())?;
    Ok((signal, side))
}

pub fn load_record(dir: &Path, entry: &ManifestEntry) -> Result<Record> {
    let mut signals = Vec::new();
    let mut task = None;
    for files in &entry.signals {
        let (s, side) = load_signal(dir, entry, files)?;
        if task.is_some_and(|t| t != side.task) {
            return Err(CliError::Format(format!("sidecars of record {} disagree on the task", entry.subject_id)));
        }
        task = Some(side.task);
        signals.push(s);
    }
    let task = task.ok_or_else(|| CliError::Format(format!("record {} has no signals", entry.subject_id)))?;
    Ok(Record::new(entry.subject_id.clone(), entry.label, signals, task)?)
}

/// All records in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Record>> {
    read_manifest(dir)?.records.iter().map(|e| load_record(dir, e)).collect()
}

/// The record with every sample rounded to `f32`, i.e. exactly what a
/// save/load round trip returns.
pub fn round_record(record: &Record) -> Result<Record> {
    let signals = record
        .signals
        .values()
        .map(|s| {
            let data = s.data().iter().map(|&v| to_f32_precision(v)).collect();
            Signal::new(s.modality(), data, s.channels(), s.fs(), s.channel_ids().to_vec())
        })
        .collect::<mrlmc_core::Result<Vec<_>>>()?;
    Ok(Record::new(record.subject_id.clone(), record.label, signals, record.task)?)
}
