//! Implementations of the CLI subcommands, callable as library functions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mrlmc_core::gradcheck::{self, GradCheck, GradCheckOptions};
use mrlmc_core::metrics::MetricsReport;
use mrlmc_core::preprocess::condition_record;
use mrlmc_core::synth::{synth_dataset, SynthSpec};
use mrlmc_core::training::{self, ablation_rows, select, split_indices, sweep_cells, TrainOutcome};
use mrlmc_core::{ExperimentConfig, Label, Record};

use crate::checkpoint;
use crate::dataset::{self, read_manifest, round_record, save_dataset};
use crate::error::{CliError, Result};
use crate::io::{load_config, read_json, write_json, write_text};

pub const THREADS_VAR: &str = "MRLMC_THREADS";

pub fn synth(spec_path: &Path, out: &Path) -> Result<usize> {
    let spec: SynthSpec = read_json(spec_path)?;
    let records = synth_dataset(&spec)?
        .iter()
        .map(round_record)
        .collect::<Result<Vec<_>>>()?;
    save_dataset(&records, out, Some(spec))?;
    Ok(records.len())
}

pub fn preprocess(input: &Path, out: &Path, config_path: &Path) -> Result<usize> {
    let cfg = load_config(config_path)?;
    let generator = read_manifest(input)?.generator;
    let records = dataset::load_dataset(input)?
        .iter()
        .map(|r| round_record(&condition_record(r, &cfg.data, &cfg.preprocess)?))
        .collect::<Result<Vec<_>>>()?;
    save_dataset(&records, out, generator)?;
    Ok(records.len())
}

pub fn trace_csv(report: &MetricsReport) -> String {
    let mut s = String::from("epoch,total,msc,sc,fl,val_f1\n");
    for t in &report.trace {
        let _ = writeln!(s, "{},{},{},{},{},{}", t.epoch, t.total, t.msc, t.sc, t.fl, t.val_f1);
    }
    s
}

/// Train and write `metrics.json`, `trace.csv`, `checkpoint.json`,
/// `checkpoint.f32` and the resolved `config.json` into `out`.
pub fn train(data: &Path, config_path: &Path, out: &Path) -> Result<TrainOutcome> {
    let cfg = load_config(config_path)?;
    let records = dataset::load_dataset(data)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_json(&out.join("config.json"), &cfg)?;
    let outcome = training::train(&cfg, &records)?;
    write_json(&out.join("metrics.json"), &outcome.test)?;
    write_text(&out.join("trace.csv"), &trace_csv(&outcome.test))?;
    checkpoint::save(&out.join("checkpoint.json"), &outcome.model, &cfg)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

/// Metrics of a checkpoint on one part of the split its run used.
pub fn eval(checkpoint_path: &Path, data: &Path, part: SplitPart) -> Result<MetricsReport> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let records = dataset::load_dataset(data)?;
    let chosen = match part {
        SplitPart::All => records,
        _ => {
            let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
            let s = split_indices(&labels, ckpt.config.train.split, ckpt.config.train.seed)?;
            let idx = match part {
                SplitPart::Train => s.train,
                SplitPart::Val => s.val,
                _ => s.test,
            };
            select(&records, &idx)
        }
    };
    Ok(training::evaluate(&ckpt.model, &chosen)?)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Worker count for independent runs, from `MRLMC_THREADS` (default 1).
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Format(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

/// `f(i)` for `i in 0..n` on up to `threads` workers, results in index
/// order.
pub fn run_cells<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap_or_else(|p| p.into_inner()).into_iter().map(|r| r.expect("cell finished")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub name: &'static str,
    pub msc: bool,
    pub sc: bool,
    pub per_seed: Vec<MetricsReport>,
}

impl AblationResult {
    pub fn mean(&self, f: impl Fn(&MetricsReport) -> f64) -> f64 {
        self.per_seed.iter().map(f).sum::<f64>() / self.per_seed.len() as f64
    }
}

/// The four loss-term combinations, each trained once per seed on the
/// same splits.
pub fn ablate_records(cfg: &ExperimentConfig, records: &[Record], seeds: &[u64], threads: usize) -> Result<Vec<AblationResult>> {
    let rows = ablation_rows(cfg);
    let jobs: Vec<(usize, u64)> = (0..rows.len()).flat_map(|r| seeds.iter().map(move |&s| (r, s))).collect();
    let results = run_cells(jobs.len(), threads, |j| {
        let (r, seed) = jobs[j];
        let mut c = rows[r].config.clone();
        c.train.seed = seed;
        training::train(&c, records).map(|o| o.test)
    });
    let mut results = results.into_iter();
    rows.iter()
        .map(|row| {
            let per_seed = results.by_ref().take(seeds.len()).collect::<mrlmc_core::Result<Vec<_>>>()?;
            Ok(AblationResult { name: row.name, msc: row.msc, sc: row.sc, per_seed })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationResult], seeds: &[u64]) -> String {
    let seeds = seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
    let mut s = String::from("loss_terms,msc,sc,fl,seeds,accuracy,precision,recall,f1\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},true,{},{},{},{},{}",
            r.name,
            r.msc,
            r.sc,
            seeds,
            r.mean(|m| m.accuracy),
            r.mean(|m| m.precision),
            r.mean(|m| m.recall),
            r.mean(|m| m.f1)
        );
    }
    s
}

/// Ablation table with metrics averaged over `seeds` (the config's seed if
/// empty).
pub fn ablate(data: &Path, config_path: &Path, out: &Path, seeds: &[u64]) -> Result<Vec<AblationResult>> {
    let cfg = load_config(config_path)?;
    let records = dataset::load_dataset(data)?;
    let seeds = if seeds.is_empty() { vec![cfg.train.seed] } else { seeds.to_vec() };
    let rows = ablate_records(&cfg, &records, &seeds, thread_cap()?)?;
    write_text(out, &ablation_csv(&rows, &seeds))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok(MetricsReport, usize),
    Invalid(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_scale: usize,
    pub n_trans: usize,
    pub n_head: usize,
    pub status: CellStatus,
}

pub fn sweep_records(cfg: &ExperimentConfig, records: &[Record], threads: usize) -> Vec<SweepRow> {
    let cells = sweep_cells(cfg);
    run_cells(cells.len(), threads, |i| {
        let c = &cells[i];
        let status = match &c.invalid {
            Some(reason) => CellStatus::Invalid(reason.clone()),
            None => match training::train(&c.config, records) {
                Ok(o) => CellStatus::Ok(o.test, o.best_epoch),
                Err(e) => CellStatus::Failed(e.to_string()),
            },
        };
        SweepRow { n_scale: c.n_scale, n_trans: c.n_trans, n_head: c.n_head, status }
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("n_scale,n_trans,n_head,status,accuracy,precision,recall,f1,best_epoch,note\n");
    for r in rows {
        let _ = write!(s, "{},{},{},", r.n_scale, r.n_trans, r.n_head);
        let _ = match &r.status {
            CellStatus::Ok(m, epoch) => {
                writeln!(s, "ok,{},{},{},{},{},", m.accuracy, m.precision, m.recall, m.f1, epoch)
            }
            CellStatus::Invalid(why) => writeln!(s, "invalid config,,,,,,{}", csv_field(why)),
            CellStatus::Failed(why) => writeln!(s, "error,,,,,,{}", csv_field(why)),
        };
    }
    s
}

/// One row per grid point; infeasible points are flagged, runtime failures
/// are recorded and reported after the table is written.
pub fn sweep(data: &Path, config_path: &Path, out: &Path) -> Result<Vec<SweepRow>> {
    let cfg = load_config(config_path)?;
    let records = dataset::load_dataset(data)?;
    let rows = sweep_records(&cfg, &records, thread_cap()?);
    write_text(out, &sweep_csv(&rows))?;
    let failed = rows.iter().filter(|r| matches!(r.status, CellStatus::Failed(_))).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} sweep cells failed, see {}", out.display())));
    }
    Ok(rows)
}

pub fn gradcheck(config_path: Option<&Path>) -> Result<Vec<GradCheck>> {
    let cfg = match config_path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(gradcheck::run_all(&cfg, &GradCheckOptions::default())?)
}

pub fn embeddings_csv(rows: &[(String, Label, mrlmc_core::model::Embeddings)]) -> String {
    let mut s = String::from("subject_id,label");
    if let Some((_, _, e)) = rows.first() {
        for (tag, len) in [("v", e.v.len()), ("u", e.u.len()), ("zf", e.z_f.len()), ("ze", e.z_e.len())] {
            for i in 0..len {
                let _ = write!(s, ",{tag}_{i}");
            }
        }
    }
    s.push('\n');
    for (id, label, e) in rows {
        s.push_str(&csv_field(id));
        let _ = write!(s, ",{label}");
        for x in e.v.iter().chain(&e.u).chain(&e.z_f).chain(&e.z_e) {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

/// Per-record `v`, `u`, `z_f`, `z_e` of every record in `data`.
pub fn embed(checkpoint_path: &Path, data: &Path) -> Result<String> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let records = dataset::load_dataset(data)?;
    Ok(embeddings_csv(&training::embed(&ckpt.model, &records)?))
}
