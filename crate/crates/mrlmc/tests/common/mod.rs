#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrlmc_core::synth::{ModalitySpec, SynthSpec};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_mrlmc"))
}

pub fn mrlmc(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env_remove("MRLMC_THREADS").output().expect("spawn mrlmc")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// 50 s records with low-frequency EEG so both modalities survive
/// resampling to 2 Hz (100 timesteps).
pub fn small_spec(n_records: usize, channels: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_records,
        fnirs: Some(ModalitySpec { channels, fs: 10.0 }),
        eeg: Some(ModalitySpec { channels, fs: 20.0 }),
        duration_s: 50.0,
        onset_s: 5.0,
        question_count: 3,
        t_q: 10.0,
        eeg_band_hz: [0.3, 0.8],
        seed,
        ..SynthSpec::default()
    }
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write fixture");
}

/// Config matching `small_spec` data: no filters, 2 Hz common rate.
pub fn small_config(epochs: usize) -> String {
    format!(
        r#"{{"preprocess": {{"fs_common": 2, "fnirs_filter": null, "eeg_filter": null}},
  "augment": {{"lambda_s": 3}},
  "train": {{"epochs": {epochs}, "patience": 10}}}}"#
    )
}

/// Synthesize and preprocess a dataset through the CLI; returns the
/// preprocessed directory and the config path.
pub fn prepared(dir: &Path, n_records: usize, channels: usize, epochs: usize) -> (PathBuf, PathBuf) {
    let spec = dir.join("spec.json");
    write(&spec, &serde_json::to_string(&small_spec(n_records, channels, 5)).unwrap());
    let cfg = dir.join("config.json");
    write(&cfg, &small_config(epochs));
    let raw = dir.join("raw");
    let pre = dir.join("pre");
    let o = mrlmc(&["synth", "--spec", path(&spec), "--out", path(&raw)]);
    assert!(o.status.success(), "synth: {}", stderr(&o));
    let o = mrlmc(&["preprocess", "--in", path(&raw), "--out", path(&pre), "--config", path(&cfg)]);
    assert!(o.status.success(), "preprocess: {}", stderr(&o));
    (pre, cfg)
}
