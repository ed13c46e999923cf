//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{mrlmc, path, small_config, small_spec, stderr, write};
use mrlmc::commands::ablate_records;
use mrlmc_core::augment::{build_input_pairs, time_mask, time_warp, AugmentMethod, AugmentSpec, InputMode};
use mrlmc_core::config::PreprocessConfig;
use mrlmc_core::contrastive::{l_msc, PairBatch};
use mrlmc_core::gradcheck::{run_all, GradCheckOptions};
use mrlmc_core::head::{focal_loss, FocalConfig};
use mrlmc_core::nn::Mat;
use mrlmc_core::preprocess::{
    bandpass_fir, condition_record, hemoglobin_changes, Extinction, FilterSpec, OpticalFrame,
};
use mrlmc_core::rng;
use mrlmc_core::semantic::{l_sc, MultiHeadAttention};
use mrlmc_core::synth::{synth_dataset, ModalitySpec};
use mrlmc_core::training;
use mrlmc_core::{ExperimentConfig, Modality, Record, Signal, TaskMeta};
use rand::Rng;

mod common;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradient_contract() -> Outcome {
    let start = Instant::now();
    let opts = GradCheckOptions { batch: 3, ..GradCheckOptions::default() };
    let checks = run_all(&ExperimentConfig::default(), &opts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for name in ["adapter+msc", "attention", "transformer_unit", "fusion_head", "l_msc", "l_sc", "l_fl", "objective"] {
        ensure(checks.iter().any(|c| c.name == name), format!("no check named {name}"))?;
    }
    let worst = checks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    for c in &checks {
        ensure(c.max_rel_err <= 1e-3, format!("{} max rel err {:.3e}", c.name, c.max_rel_err))?;
    }
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} checks, worst {} {:.2e} <= 1e-3, {:.1} s",
        checks.len(),
        worst.name,
        worst.max_rel_err,
        elapsed.as_secs_f64()
    ))
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn brute_force_l_msc(v: &[Vec<f64>], u: &[Vec<f64>], tau: f64) -> f64 {
    let items: Vec<&Vec<f64>> = v.iter().zip(u).flat_map(|(a, b)| [a, b]).collect();
    let n = items.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (cos(items[i], items[j]) / tau).exp();
            }
        }
        total -= ((cos(items[i], items[i ^ 1]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

fn contrastive_oracle() -> Outcome {
    let mut r = rng::derived(2024, 0, 0);
    let mut worst: f64 = 0.0;
    for n in 2..=4 {
        for _ in 0..20 {
            let dim = r.random_range(2..12);
            let tau = r.random_range(0.05..1.0);
            let mut draw = || (0..dim).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let v: Vec<_> = (0..n).map(|_| draw()).collect();
            let u: Vec<_> = (0..n).map(|_| draw()).collect();
            let fast = l_msc(&PairBatch::interleaved(&v, &u, tau).unwrap()).map_err(|e| e.to_string())?;
            let err = (fast - brute_force_l_msc(&v, &u, tau)).abs();
            ensure(err <= 1e-6, format!("N={n}: differs by {err:.3e}"))?;
            worst = worst.max(err);
        }
        let same = vec![vec![0.3, -1.2, 0.7]; n];
        let loss = l_msc(&PairBatch::interleaved(&same, &same, 0.2).unwrap()).map_err(|e| e.to_string())?;
        let want = ((2 * n - 1) as f64).ln();
        ensure((loss - want).abs() <= 1e-9, format!("identical N={n}: {loss} vs log(2N-1) {want}"))?;
    }
    Ok(format!("N in 2..=4, max |vectorized - double loop| {worst:.1e} <= 1e-6, identical batch = log(2N-1)"))
}

fn spot_values() -> Outcome {
    let fl = focal_loss(0.9, &FocalConfig { alpha_f: 0.25, gamma: 2.0 }).map_err(|e| e.to_string())?;
    ensure((fl - 2.634e-4).abs() <= 1e-7, format!("focal(0.9) = {fl}"))?;
    let mut r = rng::derived(77, 0, 0);
    for _ in 0..200 {
        let z: Vec<f64> = (0..r.random_range(1..64)).map(|_| r.random_range(-3.0..3.0)).collect();
        let neg: Vec<f64> = z.iter().map(|x| -x).collect();
        let same = l_sc(&z, &z).map_err(|e| e.to_string())?;
        let opposite = l_sc(&z, &neg).map_err(|e| e.to_string())?;
        ensure(same == 0.0 && opposite == 2.0, format!("L_SC(z,z) = {same}, L_SC(z,-z) = {opposite}"))?;
    }
    let mut worst: f64 = 0.0;
    for (width, heads, tokens) in [(8, 2, 3), (16, 4, 5), (32, 16, 6)] {
        let attn = MultiHeadAttention::new(width, heads, &mut r).map_err(|e| e.to_string())?;
        let x = Mat::from_vec(tokens, width, (0..tokens * width).map(|_| r.random_range(-4.0..4.0)).collect());
        let (_, cache) = attn.forward(&x, &x, &x).map_err(|e| e.to_string())?;
        for p in &cache.probs {
            for row in 0..p.rows {
                worst = worst.max((p.row(row).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-6, format!("attention row sum off by {worst:.3e}"))?;
    Ok(format!("focal(0.9) = {fl:.4e}, L_SC exact at z and -z, attention rows within {worst:.1e}"))
}

fn augmentation_invariants() -> Outcome {
    let task = TaskMeta { total_duration: 40.0, question_count: 3, t_q: 8.0, onset: 4.0 };
    let mut r = rng::derived(4, 0, 0);
    for draw in 0..1000 {
        let fs = [5.0, 10.0, 20.0][draw % 3];
        let n = (task.total_duration * fs) as usize;
        let x = Signal::new(
            Modality::Eeg,
            (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect(),
            2,
            fs,
            Signal::default_ids("E", 2),
        )
        .unwrap();
        let lambda = r.random_range(0.1..=task.t_q);
        for method in [AugmentMethod::Mask, AugmentMethod::Warp] {
            let spec = AugmentSpec { method, lambda_s: lambda, ..Default::default() };
            let a = match method {
                AugmentMethod::Mask => time_mask(&x, &task, &spec, &mut r),
                AugmentMethod::Warp => time_warp(&x, &task, &spec, &mut r),
            }
            .map_err(|e| e.to_string())?;
            let w = a.window;
            ensure(w.width <= lambda && lambda <= task.t_q, format!("width {} lambda {lambda}", w.width))?;
            ensure(
                (a.signal.channels(), a.signal.timesteps(), a.signal.fs(), a.signal.modality())
                    == (x.channels(), x.timesteps(), x.fs(), x.modality()),
                "shape or rate changed",
            )?;
            if method == AugmentMethod::Mask {
                for c in 0..2 {
                    for i in (0..n).filter(|i| !(w.start..w.start + w.len).contains(i)) {
                        ensure(a.signal.row(c)[i].to_bits() == x.row(c)[i].to_bits(), "mask touched outside window")?;
                    }
                }
            }
        }
        let identity = AugmentSpec { method: AugmentMethod::Warp, lambda_s: lambda, warp_factor_range: [1.0, 1.0], ..Default::default() };
        let a = time_warp(&x, &task, &identity, &mut r).map_err(|e| e.to_string())?;
        let err = a.signal.data().iter().zip(x.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        ensure(err <= 1e-6, format!("unit warp moved a sample by {err:.3e}"))?;
    }

    let records = synth_dataset(&small_spec(20, 2, 3)).map_err(|e| e.to_string())?;
    for method in [AugmentMethod::Mask, AugmentMethod::Warp] {
        let spec = AugmentSpec { method, probability: 1.0, ..Default::default() };
        for mode in [InputMode::Multi, InputMode::SingleFnirs, InputMode::SingleEeg] {
            let pairs = build_input_pairs(&records, mode, &spec, 0).map_err(|e| e.to_string())?;
            for (p, rec) in pairs.iter().zip(&records) {
                ensure(p.label == rec.label && p.subject_id == rec.subject_id, "pair label changed")?;
                let (mx, my) = mode.sides();
                for (s, m) in [(&p.x, mx), (&p.y, my)] {
                    let orig = &rec.signals[&m];
                    ensure(s.timesteps() == orig.timesteps() && s.fs() == orig.fs(), "pair signal reshaped")?;
                }
            }
        }
    }
    Ok("1000 draws each of mask and warp: width <= lambda <= t_q, shape/fs/label kept, mask exact outside window, unit warp within 1e-6".into())
}

fn central_rms(x: &[f64]) -> f64 {
    let mid = &x[x.len() / 4..3 * x.len() / 4];
    (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt()
}

fn preprocessing_oracles() -> Outcome {
    let ext = Extinction::default();
    let (channels, t) = (4, 64);
    let mut r = rng::derived(8, 0, 0);
    let hbo: Vec<f64> = (0..channels * t).map(|_| r.random_range(-3.0..3.0)).collect();
    let hbr: Vec<f64> = (0..channels * t).map(|_| r.random_range(-1.5..1.5)).collect();
    let distances = vec![3.0, 2.0, 3.5, 4.0];
    let dpf = [6.0, 6.0];
    let mut od = [Vec::new(), Vec::new()];
    for c in 0..channels {
        for i in 0..t {
            let k = c * t + i;
            for (w, (eo, er)) in [(ext.hbo_690, ext.hbr_690), (ext.hbo_830, ext.hbr_830)].into_iter().enumerate() {
                let path_len = distances[c] * dpf[w] * 1e-6;
                od[w].push((eo * hbo[k] + er * hbr[k]) * path_len);
            }
        }
    }
    let frame = OpticalFrame { od, channels, fs: 10.0, channel_ids: Signal::default_ids("F", channels), distances_cm: distances, dpf };
    let back = hemoglobin_changes(&frame, &ext).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (a, b) in back.hbo.iter().zip(&hbo).chain(back.hbr.iter().zip(&hbr)) {
        worst = worst.max((a - b).abs() / b.abs());
    }
    ensure(worst <= 1e-9, format!("Beer-Lambert relative error {worst:.3e}"))?;

    let filter = PreprocessConfig::default().fnirs_filter.ok_or("no default fNIRS filter")?;
    ensure(filter == FilterSpec { low_hz: 0.01, high_hz: 0.08, ..filter }, "default band is not 0.01-0.08 Hz")?;
    let fs = 100.0;
    let mut gains = Vec::new();
    for f in [0.04, 0.5] {
        let data: Vec<f64> = (0..(150.0 * fs) as usize).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
        let x = Signal::new(Modality::Fnirs, data, 1, fs, vec!["C1".into()]).unwrap();
        let y = bandpass_fir(&x, &filter).map_err(|e| e.to_string())?;
        gains.push(20.0 * (central_rms(y.data()) / central_rms(x.data())).log10());
    }
    ensure(gains[0].abs() <= 1.0, format!("0.04 Hz gain {:.3} dB", gains[0]))?;
    ensure(gains[1] <= -40.0, format!("0.5 Hz gain {:.1} dB", gains[1]))?;
    Ok(format!(
        "Beer-Lambert rel err {worst:.1e}, 0.04 Hz {:+.3} dB, 0.5 Hz {:.1} dB",
        gains[0], gains[1]
    ))
}

/// The 200-record learnability set, conditioned to 100 timesteps.
fn learnability_data() -> Result<(ExperimentConfig, Vec<Record>), String> {
    let spec = mrlmc_core::synth::SynthSpec {
        fnirs: Some(ModalitySpec { channels: 8, fs: 10.0 }),
        eeg: Some(ModalitySpec { channels: 8, fs: 20.0 }),
        ..small_spec(200, 8, 11)
    };
    let mut cfg = ExperimentConfig::default();
    cfg.preprocess.fs_common = 2.0;
    cfg.preprocess.fnirs_filter = None;
    cfg.preprocess.eeg_filter = None;
    let records = synth_dataset(&spec)
        .and_then(|rs| rs.iter().map(|r| condition_record(r, &cfg.data, &cfg.preprocess)).collect())
        .map_err(|e: mrlmc_core::Error| e.to_string())?;
    Ok((cfg, records))
}

const SEEDS: [u64; 3] = [0, 1, 2];

struct FullRuns {
    f1: Vec<f64>,
    seconds: Vec<f64>,
}

fn full_runs(cfg: &ExperimentConfig, records: &[Record]) -> Result<FullRuns, String> {
    let mut runs = FullRuns { f1: Vec::new(), seconds: Vec::new() };
    for seed in SEEDS {
        let mut c = cfg.clone();
        c.train.seed = seed;
        let start = Instant::now();
        let o = training::train(&c, records).map_err(|e| e.to_string())?;
        runs.seconds.push(start.elapsed().as_secs_f64());
        runs.f1.push(o.test.f1);
    }
    Ok(runs)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn learnability(runs: &Result<FullRuns, String>, records: &[Record]) -> Outcome {
    let runs = runs.as_ref().map_err(|e| e.clone())?;
    let t = records[0].signals[&Modality::Fnirs].timesteps();
    let depressed = records.iter().filter(|r| r.label == mrlmc_core::Label::Depressed).count();
    ensure(records.len() == 200 && t == 100 && depressed == 40, "dataset shape differs from 200 x 100, ratio 0.2")?;
    let m = mean(&runs.f1);
    let slowest = runs.seconds.iter().cloned().fold(0.0, f64::max);
    let summary = format!(
        "test macro F1 per seed {:?}, mean {m:.3} (>= 0.90), slowest run {slowest:.1} s",
        runs.f1.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    ensure(m >= 0.90 && slowest < 300.0, summary.clone())?;
    Ok(summary)
}

fn ablation_direction(cfg: &ExperimentConfig, records: &[Record], full: &Result<FullRuns, String>) -> Outcome {
    let full = full.as_ref().map_err(|e| e.clone())?;
    let rows = ablate_records(cfg, records, &SEEDS, 1).map_err(|e| e.to_string())?;
    let means: Vec<(&str, f64)> = rows.iter().map(|r| (r.name, r.mean(|m| m.f1))).collect();
    // The all-losses row repeats the learnability runs exactly.
    ensure(
        rows[3].per_seed.iter().map(|m| m.f1).collect::<Vec<_>>() == full.f1,
        "all-losses ablation row differs from the learnability runs",
    )?;
    let table = means.iter().map(|(n, f)| format!("{n} {f:.3}")).collect::<Vec<_>>().join(", ");
    ensure(means[3].1 >= means[0].1, format!("all losses below FL only: {table}"))?;
    Ok(format!("mean macro F1 over 3 seeds: {table}"))
}

fn determinism(dir: &Path) -> Outcome {
    let (data, cfg) = common::prepared(dir, 30, 3, 4);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        let o = mrlmc(&["train", "--data", path(&data), "--config", path(&cfg), "--out", path(&out)]);
        ensure(o.status.success(), format!("train failed: {}", stderr(&o)))?;
        outputs.push(out);
    }
    for f in ["metrics.json", "checkpoint.json", "checkpoint.f32", "trace.csv", "config.json"] {
        let a = fs::read(outputs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(outputs[1].join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, format!("{f} differs between runs"))?;
    }
    Ok("two train runs: metrics.json, checkpoint.json/.f32, trace.csv byte-identical".into())
}

fn sweep_harness(dir: &Path) -> Outcome {
    let (data, _) = common::prepared(dir, 50, 4, 2);
    let cfg = dir.join("sweep.json");
    let mut base: serde_json::Value = serde_json::from_str(&small_config(2)).unwrap();
    // Token width 16: 4, 8 and 16 heads divide it, 32 does not.
    base["model"] = serde_json::json!({"n_out": 16});
    write(&cfg, &base.to_string());
    let out = dir.join("sweep.csv");
    let start = Instant::now();
    let o = mrlmc(&["sweep", "--data", path(&data), "--config", path(&cfg), "--out", path(&out)]);
    ensure(o.status.success(), format!("sweep exited {:?}: {}", o.status.code(), stderr(&o)))?;
    let csv = fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    ensure(
        lines.next() == Some("n_scale,n_trans,n_head,status,accuracy,precision,recall,f1,best_epoch,note"),
        "unexpected header",
    )?;
    let rows: Vec<Vec<&str>> = lines.map(|l| l.splitn(10, ',').collect()).collect();
    ensure(rows.len() == 36, format!("{} rows for a 36-point grid", rows.len()))?;
    let (mut ok, mut flagged) = (0, 0);
    for r in &rows {
        let head: usize = r[2].parse().map_err(|_| "bad n_head")?;
        match r[3] {
            "ok" => {
                ensure(head != 32, "32 heads accepted for width 16")?;
                for v in &r[4..8] {
                    let x: f64 = v.parse().map_err(|_| format!("bad metric {v:?}"))?;
                    ensure((0.0..=1.0).contains(&x), format!("metric {x} out of range"))?;
                }
                ok += 1;
            }
            "invalid config" => {
                ensure(head == 32 && r[9].contains("n_head"), format!("unexpected invalid row {r:?}"))?;
                flagged += 1;
            }
            other => return Err(format!("row status {other:?}")),
        }
    }
    ensure(ok == 27 && flagged == 9, format!("{ok} trained, {flagged} flagged"))?;
    Ok(format!("36 rows: 27 trained, 9 flagged invalid (32 heads), {:.1} s", start.elapsed().as_secs_f64()))
}

fn report(failures: &mut usize, name: &str, outcome: Outcome) {
    match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL {name}: {detail}");
        }
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut failures = 0;
    report(&mut failures, "1 gradient contract", gradient_contract());
    report(&mut failures, "2 contrastive oracle", contrastive_oracle());
    report(&mut failures, "3 closed-form spot values", spot_values());
    report(&mut failures, "4 augmentation invariants", augmentation_invariants());
    report(&mut failures, "5 preprocessing oracles", preprocessing_oracles());
    match learnability_data() {
        Ok((cfg, records)) => {
            let full = full_runs(&cfg, &records);
            report(&mut failures, "6 desk-scale learnability", learnability(&full, &records));
            report(&mut failures, "7 ablation direction", ablation_direction(&cfg, &records, &full));
        }
        Err(e) => {
            report(&mut failures, "6 desk-scale learnability", Err(e.clone()));
            report(&mut failures, "7 ablation direction", Err(e));
        }
    }
    let det = tmp.path().join("determinism");
    fs::create_dir_all(&det).unwrap();
    report(&mut failures, "8 determinism", determinism(&det));
    let sweep = tmp.path().join("sweep");
    fs::create_dir_all(&sweep).unwrap();
    report(&mut failures, "9 sweep harness", sweep_harness(&sweep));
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
