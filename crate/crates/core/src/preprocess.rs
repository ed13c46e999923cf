//! Signal conditioning: zero-phase FIR band-pass, band-limited resampling,
//! channel selection and optical density to hemoglobin conversion.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, mirror_index};
use crate::config::{DataConfig, PreprocessConfig};
use crate::signal::{Modality, Record, Signal};

/// Band-pass design parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Filter length; odd and at least 31.
    pub taps: usize,
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return Err(Error::invalid("filter.low_hz", "need 0 < low_hz < high_hz"));
        }
        if !(self.high_hz < fs / 2.0) {
            return Err(Error::invalid(
                "filter.high_hz",
                format!("passband edge {} Hz is not below Nyquist ({} Hz)", self.high_hz, fs / 2.0),
            ));
        }
        if self.taps < 31 || self.taps.is_multiple_of(2) {
            return Err(Error::invalid("filter.taps", "must be odd and at least 31"));
        }
        Ok(())
    }
}

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * math::cos(2.0 * PI * n as f64 / (len - 1) as f64)
}

/// Linear-phase windowed-sinc (Hamming) band-pass taps, scaled to unit gain
/// at the passband center.
pub fn design_bandpass(spec: &FilterSpec, fs: f64) -> Result<Vec<f64>> {
    spec.validate(fs)?;
    let len = spec.taps;
    let mid = (len / 2) as f64;
    let fl = spec.low_hz / fs;
    let fh = spec.high_hz / fs;
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let m = n as f64 - mid;
            hamming(n, len) * (2.0 * fh * math::sinc(2.0 * fh * m) - 2.0 * fl * math::sinc(2.0 * fl * m))
        })
        .collect();
    let wc = PI * (fl + fh);
    let gain: f64 = h
        .iter()
        .enumerate()
        .map(|(n, &c)| c * math::cos(wc * (n as f64 - mid)))
        .sum();
    h.iter_mut().for_each(|c| *c /= gain);
    Ok(h)
}

/// Zero-phase filtering of one channel with symmetric taps: a centered
/// pass followed by a time-reversed pass, over a mirror-padded copy one
/// filter length wide on each side.
fn filtfilt_symmetric(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let half = h.len() / 2;
    let pad = h.len();
    let ext: Vec<f64> = (0..n + 2 * pad)
        .map(|i| x[mirror_index(i as isize - pad as isize, n)])
        .collect();
    let centered = |src: &[f64], i: usize| -> f64 {
        let base = i - half;
        h.iter().zip(&src[base..base + h.len()]).map(|(a, b)| a * b).sum()
    };
    // First pass is only needed where the second pass reads it.
    let lo = pad - half;
    let hi = pad + n + half;
    let mut first = vec![0.0; ext.len()];
    for i in lo..hi {
        first[i] = centered(&ext, i);
    }
    (pad..pad + n).map(|i| centered(&first, i)).collect()
}

pub fn bandpass_fir(signal: &Signal, spec: &FilterSpec) -> Result<Signal> {
    let h = design_bandpass(spec, signal.fs())?;
    let data: Vec<f64> = signal.rows().flat_map(|row| filtfilt_symmetric(row, &h)).collect();
    Ok(signal.with_data(data))
}

const RESAMPLE_ZERO_CROSSINGS: f64 = 16.0;

fn blackman(x: f64) -> f64 {
    if math::abs(x) >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * math::cos(PI * x) + 0.08 * math::cos(2.0 * PI * x)
    }
}

/// Band-limited resampling by windowed-sinc interpolation. The anti-alias
/// cutoff is the lower of the two Nyquist rates; interpolation weights are
/// normalized to unit sum so constants are preserved exactly.
pub fn resample(signal: &Signal, fs_out: f64) -> Result<Signal> {
    if !(fs_out > 0.0) || !fs_out.is_finite() {
        return Err(Error::invalid("fs_out", "target sampling rate must be positive"));
    }
    let fs = signal.fs();
    if fs_out == fs {
        return Ok(signal.clone());
    }
    let n = signal.timesteps();
    let ratio = fs_out / fs;
    let n_out = (math::round(n as f64 * ratio) as usize).max(1);
    let fc = 0.5 * ratio.min(1.0);
    let half_width = RESAMPLE_ZERO_CROSSINGS / (2.0 * fc);

    // Weights depend only on the output position, so share them across rows.
    let kernels: Vec<(isize, Vec<f64>)> = (0..n_out)
        .map(|j| {
            let t = j as f64 / ratio;
            let k0 = math::ceil(t - half_width) as isize;
            let k1 = math::floor(t + half_width) as isize;
            let mut w: Vec<f64> = (k0..=k1)
                .map(|k| {
                    let d = t - k as f64;
                    2.0 * fc * math::sinc(2.0 * fc * d) * blackman(d / half_width)
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            (k0, w)
        })
        .collect();

    let mut data = Vec::with_capacity(n_out * signal.channels());
    for row in signal.rows() {
        for (k0, w) in &kernels {
            let y: f64 = w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * row[mirror_index(k0 + i as isize, n)])
                .sum();
            data.push(y);
        }
    }
    Ok(signal.with_timeline(data, fs_out))
}

/// Restrict and reorder rows to `keep`.
pub fn select_channels<S: AsRef<str>>(signal: &Signal, keep: &[S]) -> Result<Signal> {
    if keep.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut rows = Vec::with_capacity(keep.len());
    for id in keep {
        let id = id.as_ref();
        let c = signal
            .channel_ids()
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownChannel(id.into()))?;
        rows.push(c);
    }
    let data: Vec<f64> = rows.iter().flat_map(|&c| signal.row(c).iter().copied()).collect();
    let ids: Vec<String> = keep.iter().map(|s| String::from(s.as_ref())).collect();
    Signal::new(signal.modality(), data, rows.len(), signal.fs(), ids)
}

/// Channel selection, band-pass at the native rate and resampling to
/// `fs_common`, applied to every modality of a record.
pub fn condition_record(record: &Record, data: &DataConfig, cfg: &PreprocessConfig) -> Result<Record> {
    let mut out = Vec::with_capacity(record.signals.len());
    for (m, s) in &record.signals {
        let (keep, filter) = match m {
            Modality::Fnirs => (&data.fnirs_channels, &cfg.fnirs_filter),
            Modality::Eeg => (&data.eeg_channels, &cfg.eeg_filter),
        };
        let mut s = match keep {
            Some(ids) => select_channels(s, ids)?,
            None => s.clone(),
        };
        if let Some(f) = filter {
            s = bandpass_fir(&s, f)?;
        }
        out.push(resample(&s, cfg.fs_common)?);
    }
    Record::new(record.subject_id.clone(), record.label, out, record.task)
}

/// Molar extinction coefficients in 1/(cm * mol/L) for decadic optical
/// density, at 690 nm and 830 nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Extinction {
    pub hbo_690: f64,
    pub hbr_690: f64,
    pub hbo_830: f64,
    pub hbr_830: f64,
}

impl Default for Extinction {
    /// Tabulated hemoglobin spectra (Prahl).
    fn default() -> Self {
        Extinction { hbo_690: 276.0, hbr_690: 2051.96, hbo_830: 974.0, hbr_830: 693.04 }
    }
}

/// Optical-density changes at (690 nm, 830 nm) for each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalFrame {
    /// `[690 nm, 830 nm]`, each `channels x timesteps` row-major.
    pub od: [Vec<f64>; 2],
    pub channels: usize,
    pub fs: f64,
    pub channel_ids: Vec<String>,
    /// Source-detector separation per channel, cm.
    pub distances_cm: Vec<f64>,
    /// Differential pathlength factor per wavelength.
    pub dpf: [f64; 2],
}

/// Concentration changes in umol/L, each `channels x timesteps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hemoglobin {
    pub hbo: Vec<f64>,
    pub hbr: Vec<f64>,
}

const MICROMOLAR: f64 = 1e-6;

impl OpticalFrame {
    fn validate(&self) -> Result<usize> {
        if self.channels == 0 || self.od[0].is_empty() || !self.od[0].len().is_multiple_of(self.channels) {
            return Err(Error::Shape("optical density rows do not match channel count".into()));
        }
        if self.od[0].len() != self.od[1].len() {
            return Err(Error::Shape("wavelength matrices differ in size".into()));
        }
        if self.distances_cm.len() != self.channels || self.channel_ids.len() != self.channels {
            return Err(Error::Shape("per-channel metadata length differs from channel count".into()));
        }
        if self.distances_cm.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("distances_cm", "must be positive"));
        }
        if self.dpf.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("dpf", "must be positive"));
        }
        Ok(self.od[0].len() / self.channels)
    }

    /// Per-channel 2x2 system mapping (dHbO, dHbR) in umol/L to
    /// (dOD_690, dOD_830).
    pub fn forward_matrix(&self, ext: &Extinction, channel: usize) -> [[f64; 2]; 2] {
        let d = self.distances_cm[channel] * MICROMOLAR;
        let (l1, l2) = (d * self.dpf[0], d * self.dpf[1]);
        [[ext.hbo_690 * l1, ext.hbr_690 * l1], [ext.hbo_830 * l2, ext.hbr_830 * l2]]
    }
}

/// Solve the modified Beer-Lambert system per channel and timestep.
pub fn hemoglobin_changes(frame: &OpticalFrame, ext: &Extinction) -> Result<Hemoglobin> {
    let t = frame.validate()?;
    let base = math::abs(ext.hbo_690 * ext.hbr_830).max(math::abs(ext.hbr_690 * ext.hbo_830));
    let det_ext = ext.hbo_690 * ext.hbr_830 - ext.hbr_690 * ext.hbo_830;
    if !(math::abs(det_ext) > 1e-12 * base) {
        return Err(Error::invalid("beer_lambert.extinction", "extinction matrix is singular"));
    }
    let mut hbo = Vec::with_capacity(frame.od[0].len());
    let mut hbr = Vec::with_capacity(frame.od[0].len());
    for c in 0..frame.channels {
        let [[a, b], [cc, d]] = frame.forward_matrix(ext, c);
        let det = a * d - b * cc;
        let rows = c * t..(c + 1) * t;
        for (o1, o2) in frame.od[0][rows.clone()].iter().zip(&frame.od[1][rows]) {
            hbo.push((d * o1 - b * o2) / det);
            hbr.push((a * o2 - cc * o1) / det);
        }
    }
    Ok(Hemoglobin { hbo, hbr })
}

/// HbO concentration change as an FNIRS signal.
pub fn od_to_hemoglobin(frame: &OpticalFrame, ext: &Extinction) -> Result<Signal> {
    let hb = hemoglobin_changes(frame, ext)?;
    Signal::new(Modality::Fnirs, hb.hbo, frame.channels, frame.fs, frame.channel_ids.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sig(rows: &[&[f64]], fs: f64) -> Signal {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Signal::new(Modality::Eeg, data, rows.len(), fs, Signal::default_ids("C", rows.len())).unwrap()
    }

    #[test]
    fn filter_spec_rejects_infeasible_band() {
        let spec = FilterSpec { low_hz: 1.0, high_hz: 40.0, taps: 101 };
        assert!(spec.validate(250.0).is_ok());
        assert!(matches!(spec.validate(50.0), Err(Error::Invalid { .. })));
        assert!(FilterSpec { taps: 100, ..spec }.validate(250.0).is_err());
        assert!(FilterSpec { taps: 29, ..spec }.validate(250.0).is_err());
    }

    #[test]
    fn taps_are_symmetric() {
        let h = design_bandpass(&FilterSpec { low_hz: 1.0, high_hz: 40.0, taps: 101 }, 250.0).unwrap();
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let s = sig(&[&[0.0; 500]], 100.0);
        let y = bandpass_fir(&s, &FilterSpec { low_hz: 1.0, high_hz: 10.0, taps: 101 }).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.timesteps(), 500);
    }

    #[test]
    fn short_signal_longer_filter() {
        let s = sig(&[&[1.0, 2.0, 3.0, 2.0, 1.0]], 100.0);
        let y = bandpass_fir(&s, &FilterSpec { low_hz: 1.0, high_hz: 10.0, taps: 31 }).unwrap();
        assert_eq!(y.timesteps(), 5);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn resample_identity_and_length() {
        let s = sig(&[&[1.0, 2.0, 3.5, -1.0]], 4.0);
        assert_eq!(resample(&s, 4.0).unwrap(), s);
        let up = resample(&s, 10.0).unwrap();
        assert_eq!(up.timesteps(), 10);
        assert_eq!(up.fs(), 10.0);
        assert!(resample(&s, 0.0).is_err());
    }

    #[test]
    fn resample_eeg_shape_arithmetic() {
        // 150 s at 1000 Hz down to 100 Hz.
        let s = sig(&[&vec![0.5; 150_000]], 1000.0);
        let r = resample(&s, 100.0).unwrap();
        assert_eq!(r.timesteps(), 15_000);
    }

    #[test]
    fn resample_preserves_constant() {
        let s = sig(&[&[2.5; 333], &[-1.25; 333]], 33.0);
        for fs_out in [5.0, 17.3, 33.5, 100.0] {
            let r = resample(&s, fs_out).unwrap();
            for (c, expected) in [(0, 2.5), (1, -1.25)] {
                for &v in r.row(c) {
                    assert!((v - expected).abs() < 1e-12, "{fs_out}: {v}");
                }
            }
        }
    }

    #[test]
    fn select_channels_cases() {
        let s = sig(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]], 1.0);
        let ids: Vec<String> = s.channel_ids().to_vec();
        assert_eq!(select_channels(&s, &ids).unwrap(), s);
        let rev: Vec<String> = ids.iter().rev().cloned().collect();
        let r = select_channels(&s, &rev).unwrap();
        assert_eq!(r.row(0), s.row(2));
        assert_eq!(r.row(2), s.row(0));
        assert_eq!(r.channel_ids(), &rev[..]);
        assert_eq!(select_channels::<&str>(&s, &[]), Err(Error::EmptySelection));
        assert_eq!(select_channels(&s, &["C9"]), Err(Error::UnknownChannel("C9".into())));
    }

    fn frame(od690: Vec<f64>, od830: Vec<f64>, channels: usize) -> OpticalFrame {
        OpticalFrame {
            od: [od690, od830],
            channels,
            fs: 10.0,
            channel_ids: Signal::default_ids("F", channels),
            distances_cm: vec![3.0; channels],
            dpf: [6.0, 6.0],
        }
    }

    #[test]
    fn zero_od_gives_zero_hbo() {
        let s = od_to_hemoglobin(&frame(vec![0.0; 8], vec![0.0; 8], 2), &Extinction::default()).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.modality(), Modality::Fnirs);
    }

    #[test]
    fn singular_extinction_rejected() {
        let ext = Extinction { hbo_690: 1.0, hbr_690: 2.0, hbo_830: 2.0, hbr_830: 4.0 };
        let err = od_to_hemoglobin(&frame(vec![0.1; 4], vec![0.1; 4], 1), &ext).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn doubling_od_doubles_hbo() {
        let ext = Extinction::default();
        let a = od_to_hemoglobin(&frame(vec![0.01, -0.02, 0.03], vec![0.02, 0.01, -0.005], 1), &ext).unwrap();
        let b = od_to_hemoglobin(&frame(vec![0.02, -0.04, 0.06], vec![0.04, 0.02, -0.01], 1), &ext).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}
