//! Independent reference computations checked against the library.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::{E, PI};

use mrlmc_core::augment::{time_mask, time_warp, AugmentMethod, AugmentSpec, WarpMap};
use mrlmc_core::contrastive::{l_msc, PairBatch};
use mrlmc_core::head::{focal_loss, FocalConfig};
use mrlmc_core::metrics::MetricsReport;
use mrlmc_core::nn::Mat;
use mrlmc_core::preprocess::{bandpass_fir, design_bandpass, hemoglobin_changes, Extinction, FilterSpec, OpticalFrame};
use mrlmc_core::rng;
use mrlmc_core::semantic::{SemanticEncoder, TransformerConfig};
use mrlmc_core::synth::{synth_dataset, SynthSpec};
use mrlmc_core::{Label, Modality, Signal, TaskMeta};
use rand::Rng;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Direct scalar evaluation: for every anchor, -log of its positive's
/// share of exp(sim / tau) over all other items.
fn brute_force_l_msc(v: &[Vec<f64>], u: &[Vec<f64>], tau: f64) -> f64 {
    let mut items = Vec::new();
    for (a, b) in v.iter().zip(u) {
        items.push(a.clone());
        items.push(b.clone());
    }
    let n = items.len();
    let mut total = 0.0;
    for i in 0..n {
        let pos = i ^ 1;
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (cos(&items[i], &items[j]) / tau).exp();
            }
        }
        total += -((cos(&items[i], &items[pos]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

#[test]
fn contrastive_loss_matches_brute_force() {
    let mut r = rng::derived(5, 0, 0);
    for n in 2..=4 {
        for trial in 0..5 {
            let dim = 3 + trial;
            let mut draw = || (0..dim).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let v: Vec<_> = (0..n).map(|_| draw()).collect();
            let u: Vec<_> = (0..n).map(|_| draw()).collect();
            let tau = 0.1 + 0.3 * trial as f64;
            let fast = l_msc(&PairBatch::interleaved(&v, &u, tau).unwrap()).unwrap();
            let slow = brute_force_l_msc(&v, &u, tau);
            assert!((fast - slow).abs() < 1e-6, "N={n}: {fast} vs {slow}");
        }
    }
}

#[test]
fn contrastive_identical_items() {
    for n in 2..=4 {
        let v = vec![vec![0.5, -2.0, 1.0, 0.25]; n];
        let loss = l_msc(&PairBatch::interleaved(&v, &v, 0.2).unwrap()).unwrap();
        assert!((loss - ((2 * n - 1) as f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn contrastive_orthogonal_negatives_closed_form() {
    let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let loss = l_msc(&PairBatch::interleaved(&v, &v, 1.0).unwrap()).unwrap();
    let expected = (E + 2.0).ln() - 1.0;
    assert!((loss - expected).abs() < 1e-12);
    assert!((expected - 0.5514).abs() < 1e-4);
}

#[test]
fn focal_loss_spot_value() {
    let cfg = FocalConfig { alpha_f: 0.25, gamma: 2.0 };
    let v = focal_loss(0.9, &cfg).unwrap();
    assert!((v - 2.634e-4).abs() < 1e-7, "{v}");
}

#[test]
fn macro_metrics_by_hand() {
    let m = MetricsReport::from_confusion([[2, 0], [2, 0]]).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.recall, 0.5);
    let f1_control = 2.0 * (0.5 * 1.0) / 1.5;
    assert!((m.f1 - (f1_control + 0.0) / 2.0).abs() < 1e-15);
    assert!((MetricsReport::from_confusion([[9, 1], [2, 8]]).unwrap().accuracy - 0.85).abs() < 1e-15);
}

/// Solve `A x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

#[test]
fn linear_probe_separates_synthetic_classes() {
    let spec = SynthSpec { seed: 3, ..SynthSpec::default() };
    let records = synth_dataset(&spec).unwrap();
    let features: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let mut f = vec![1.0];
            for m in Modality::ALL {
                let s = r.signal(m).unwrap();
                let (t0, t1) = r.task.task_window();
                let (a, b) = ((t0 * s.fs()) as usize, (t1 * s.fs()) as usize);
                for row in s.rows() {
                    let w = &row[a..b];
                    // Mean for the slow response, mean square for the oscillation.
                    match m {
                        Modality::Fnirs => f.push(w.iter().sum::<f64>() / w.len() as f64),
                        Modality::Eeg => f.push(w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64),
                    }
                }
            }
            f
        })
        .collect();
    let target: Vec<f64> = records.iter().map(|r| if r.label == Label::Depressed { 1.0 } else { -1.0 }).collect();
    let (train, test) = (0..100, 100..200);
    let d = features[0].len();
    let mut ata = vec![vec![0.0; d]; d];
    let mut atb = vec![0.0; d];
    for i in train {
        for p in 0..d {
            atb[p] += features[i][p] * target[i];
            for q in 0..d {
                ata[p][q] += features[i][p] * features[i][q];
            }
        }
    }
    for (p, row) in ata.iter_mut().enumerate() {
        row[p] += 1e-6;
    }
    let w = solve(ata, atb);
    let correct = test
        .clone()
        .filter(|&i| {
            let s: f64 = features[i].iter().zip(&w).map(|(x, y)| x * y).sum();
            (s > 0.0) == (target[i] > 0.0)
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.9, "probe accuracy {acc}");
}

fn tone(freq: f64, fs: f64, seconds: f64) -> Signal {
    let n = (fs * seconds) as usize;
    let data = (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect();
    Signal::new(Modality::Fnirs, data, 1, fs, vec!["C1".into()]).unwrap()
}

fn central_rms(x: &[f64]) -> f64 {
    let n = x.len();
    let mid = &x[n / 4..3 * n / 4];
    (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt()
}

/// Zero-phase amplitude response `H(f)^2` of symmetric taps.
fn zero_phase_gain(h: &[f64], f: f64, fs: f64) -> f64 {
    let mid = (h.len() / 2) as f64;
    let hf: f64 = h.iter().enumerate().map(|(n, c)| c * (2.0 * PI * f * (n as f64 - mid) / fs).cos()).sum();
    hf * hf
}

#[test]
fn fnirs_bandpass_tone_response() {
    let fs = 100.0;
    let spec = FilterSpec { low_hz: 0.01, high_hz: 0.08, taps: 8001 };
    let h = design_bandpass(&spec, fs).unwrap();
    for (freq, check) in [(0.04, 0), (0.5, 1)] {
        let x = tone(freq, fs, 150.0);
        let y = bandpass_fir(&x, &spec).unwrap();
        let ratio = central_rms(y.data()) / central_rms(x.data());
        let db = 20.0 * ratio.log10();
        let predicted = zero_phase_gain(&h, freq, fs);
        if check == 0 {
            assert!(db.abs() <= 1.0, "0.04 Hz gain {db} dB");
            assert!((ratio - predicted).abs() < 0.02, "measured {ratio}, response {predicted}");
        } else {
            assert!(db <= -40.0, "0.5 Hz gain {db} dB");
            assert!(predicted < 0.01);
        }
    }
}

#[test]
fn beer_lambert_inverts_forward_model() {
    let ext = Extinction::default();
    let channels = 3;
    let t = 50;
    let mut r = rng::derived(9, 0, 0);
    let hbo: Vec<f64> = (0..channels * t).map(|_| r.random_range(-2.0..2.0)).collect();
    let hbr: Vec<f64> = (0..channels * t).map(|_| r.random_range(-1.0..1.0)).collect();
    let distances = vec![3.0, 2.5, 3.5];
    let dpf = [6.0, 5.2];
    let mut od = [Vec::new(), Vec::new()];
    for c in 0..channels {
        for i in 0..t {
            let k = c * t + i;
            // Concentrations in umol/L, coefficients per mol/L.
            for (w, (eo, er)) in [(ext.hbo_690, ext.hbr_690), (ext.hbo_830, ext.hbr_830)].into_iter().enumerate() {
                let l = distances[c] * dpf[w] * 1e-6;
                od[w].push(eo * hbo[k] * l + er * hbr[k] * l);
            }
        }
    }
    let frame = OpticalFrame {
        od,
        channels,
        fs: 10.0,
        channel_ids: Signal::default_ids("F", channels),
        distances_cm: distances,
        dpf,
    };
    let back = hemoglobin_changes(&frame, &ext).unwrap();
    for (a, b) in back.hbo.iter().zip(&hbo).chain(back.hbr.iter().zip(&hbr)) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12), "{a} vs {b}");
    }
}

#[test]
fn stacked_units_compose() {
    let cfg = TransformerConfig { n_trans: 2, n_head: 4, dropout: 0.0, ..Default::default() };
    let sem = SemanticEncoder::new(3, 8, &cfg, &mut rng::derived(1, 0, 0)).unwrap();
    let mut r = rng::derived(2, 0, 0);
    let v: Vec<f64> = (0..24).map(|_| r.random_range(-1.0..1.0)).collect();
    let (z, _) = sem.forward::<rng::Rng>(&v, None).unwrap();
    let mut h = Mat::from_vec(3, 8, v);
    for unit in &sem.units {
        h = unit.forward::<rng::Rng>(&h, None).unwrap().0;
    }
    assert_eq!(z, h.data);
}

fn task() -> TaskMeta {
    TaskMeta { total_duration: 40.0, question_count: 3, t_q: 8.0, onset: 4.0 }
}

fn noise_signal(seed: u64, fs: f64) -> Signal {
    let mut r = rng::derived(seed, 0, 0);
    let n = (40.0 * fs) as usize;
    let data = (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect();
    Signal::new(Modality::Eeg, data, 2, fs, Signal::default_ids("E", 2)).unwrap()
}

#[test]
fn monte_carlo_mask_bounds() {
    let task = task();
    let spec = AugmentSpec { method: AugmentMethod::Mask, lambda_s: 6.0, ..Default::default() };
    let x = noise_signal(1, 10.0);
    let mut r = rng::derived(4, 0, 0);
    for _ in 0..1000 {
        let a = time_mask(&x, &task, &spec, &mut r).unwrap();
        let w = a.window;
        assert!(w.width > 0.0 && w.width <= spec.lambda_s && spec.lambda_s <= task.t_q);
        assert!(w.t0 >= 0.0 && w.t0 + w.width <= task.t_q + 1e-12);
        let (qs, qe) = task.question_window(w.question);
        assert!(w.start as f64 >= (qs * 10.0).round() && (w.start + w.len) as f64 <= (qe * 10.0).round());
        assert_eq!((a.signal.channels(), a.signal.timesteps(), a.signal.fs()), (2, 400, 10.0));
        let n = x.timesteps();
        for c in 0..2 {
            for i in (0..n).filter(|i| !(w.start..w.start + w.len).contains(i)) {
                assert_eq!(a.signal.row(c)[i].to_bits(), x.row(c)[i].to_bits());
            }
        }
    }
}

#[test]
fn monte_carlo_warp_bounds_and_monotone_map() {
    let task = task();
    let spec = AugmentSpec { method: AugmentMethod::Warp, lambda_s: 8.0, ..Default::default() };
    let x = noise_signal(2, 10.0);
    let mut r = rng::derived(5, 0, 0);
    for _ in 0..1000 {
        let a = time_warp(&x, &task, &spec, &mut r).unwrap();
        let w = a.window;
        assert!(w.width > 0.0 && w.width <= spec.lambda_s);
        assert!((0.8..=1.25).contains(&w.factor));
        assert_eq!(a.signal.timesteps(), x.timesteps());
        let map = WarpMap::new(x.timesteps(), w.start, w.len, w.factor);
        let grid: Vec<f64> = (0..=4 * (x.timesteps() - 1)).map(|k| map.source_position(k as f64 / 4.0)).collect();
        assert!(grid.windows(2).all(|p| p[1] > p[0]), "map not strictly increasing");
    }
    let identity = AugmentSpec { warp_factor_range: [1.0, 1.0], ..spec };
    for _ in 0..100 {
        let a = time_warp(&x, &task, &identity, &mut r).unwrap();
        for (p, q) in a.signal.data().iter().zip(x.data()) {
            assert!((p - q).abs() <= 1e-6);
        }
    }
}
