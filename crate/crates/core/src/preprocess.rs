//! Windowing, Butterworth band-pass filtering and z-score normalization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::SignalSegment;

mod butterworth;

pub use butterworth::{design_bandpass, sosfilt, sosfiltfilt, Biquad};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("signal too short: {len} samples, need {required}")]
    TooShort { len: usize, required: usize },
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("segment {0} is already preprocessed")]
    AlreadyPreprocessed(String),
}

/// Band-pass design parameters. Defaults: order 4, 0.6–15 Hz, zero phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Order of the analog low-pass prototype; the band-pass has twice as many poles.
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
    pub zero_phase: bool,
}

impl FilterSpec {
    pub fn new(fs: f64) -> Self {
        Self {
            order: 4,
            low_hz: 0.6,
            high_hz: 15.0,
            fs,
            zero_phase: true,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |m: String| Err(PreprocessError::InvalidSpec(m));
        if self.order < 2 || self.order % 2 != 0 {
            return bad(format!("order must be even and >= 2, got {}", self.order));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return bad(format!("fs must be positive, got {}", self.fs));
        }
        if !(0.0 < self.low_hz && self.low_hz < self.high_hz && self.high_hz < self.fs / 2.0) {
            return bad(format!(
                "need 0 < low ({}) < high ({}) < fs/2 ({})",
                self.low_hz,
                self.high_hz,
                self.fs / 2.0
            ));
        }
        Ok(())
    }

    /// Edge padding used by the forward-backward pass.
    pub fn pad_len(&self) -> usize {
        3 * (self.order + 1)
    }
}

/// Splits a recording into consecutive non-overlapping windows.
///
/// Ground-truth peaks are carried into the window that contains them and
/// re-based to the window start; the trailing remainder is dropped.
pub fn segment_windows(
    recording: &SignalSegment,
    window_len: usize,
) -> Result<Vec<SignalSegment>, PreprocessError> {
    let len = recording.samples.len();
    if window_len == 0 || len < window_len {
        return Err(PreprocessError::TooShort {
            len,
            required: window_len.max(1),
        });
    }
    let windows = (0..len / window_len)
        .map(|k| {
            let start = k * window_len;
            let end = start + window_len;
            SignalSegment {
                segment_id: format!("{}#w{k}", recording.segment_id),
                subject_id: recording.subject_id.clone(),
                modality: recording.modality,
                fs: recording.fs,
                samples: recording.samples[start..end].to_vec(),
                gt_peaks: recording
                    .gt_peaks
                    .iter()
                    .filter(|&&p| (start..end).contains(&p))
                    .map(|p| p - start)
                    .collect(),
                preprocessed: false,
            }
        })
        .collect();
    Ok(windows)
}

pub fn butterworth_bandpass(signal: &[f64], spec: &FilterSpec) -> Result<Vec<f64>, PreprocessError> {
    spec.validate()?;
    let required = 3 * spec.order + 1;
    if signal.len() < required {
        return Err(PreprocessError::TooShort {
            len: signal.len(),
            required,
        });
    }
    let sos = design_bandpass(spec);
    Ok(if spec.zero_phase {
        sosfiltfilt(&sos, signal, spec.pad_len())
    } else {
        sosfilt(&sos, signal)
    })
}

/// Population z-score. Flat input (std < 1e-12) maps to all zeros.
pub fn zscore(signal: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    if signal.len() < 2 {
        return Err(PreprocessError::TooShort {
            len: signal.len(),
            required: 2,
        });
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Ok(vec![0.0; signal.len()]);
    }
    Ok(signal.iter().map(|x| (x - mean) / std).collect())
}

/// Band-pass then z-score; ground truth is left untouched.
pub fn preprocess_segment(
    seg: &SignalSegment,
    spec: &FilterSpec,
) -> Result<SignalSegment, PreprocessError> {
    if seg.preprocessed {
        return Err(PreprocessError::AlreadyPreprocessed(seg.segment_id.clone()));
    }
    if (spec.fs - seg.fs).abs() > 1e-9 * seg.fs {
        return Err(PreprocessError::InvalidSpec(format!(
            "filter designed for {} Hz, segment sampled at {} Hz",
            spec.fs, seg.fs
        )));
    }
    let filtered = butterworth_bandpass(&seg.samples, spec)?;
    Ok(SignalSegment {
        samples: zscore(&filtered)?,
        preprocessed: true,
        ..seg.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{synthesize_segment, Modality, SynthSpec};
    use std::f64::consts::PI;

    fn tone(freq: f64, fs: f64, secs: f64) -> Vec<f64> {
        (0..(fs * secs) as usize)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn steady_amplitude(y: &[f64], fs: f64) -> f64 {
        let skip = (2.0 * fs) as usize;
        y[skip..y.len() - skip].iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn recording(len: usize) -> SignalSegment {
        SignalSegment {
            segment_id: "rec".into(),
            subject_id: "s".into(),
            modality: Modality::Ecg,
            fs: 100.0,
            samples: vec![0.0; len],
            gt_peaks: vec![10, 1500, 2100],
            preprocessed: false,
        }
    }

    #[test]
    fn windows_drop_remainder() {
        let w = segment_windows(&recording(2500), 1000).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].gt_peaks, vec![10]);
        assert_eq!(w[1].gt_peaks, vec![500]);
        assert_eq!(segment_windows(&recording(1000), 1000).unwrap().len(), 1);
        assert_eq!(
            segment_windows(&recording(999), 1000),
            Err(PreprocessError::TooShort {
                len: 999,
                required: 1000
            })
        );
    }

    #[test]
    fn dc_is_removed() {
        let spec = FilterSpec::new(100.0);
        let y = butterworth_bandpass(&vec![1.0; 1000], &spec).unwrap();
        let edge = 100;
        let max = y[edge..y.len() - edge].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(max < 0.01, "{max}");
    }

    #[test]
    fn passband_and_stopband() {
        let spec = FilterSpec::new(100.0);
        let pass = steady_amplitude(&butterworth_bandpass(&tone(5.0, 100.0, 10.0), &spec).unwrap(), 100.0);
        assert!((0.95..=1.05).contains(&pass), "{pass}");
        let stop = steady_amplitude(&butterworth_bandpass(&tone(40.0, 100.0, 10.0), &spec).unwrap(), 100.0);
        assert!(stop < 0.05, "{stop}");
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = FilterSpec::new(100.0);
        spec.order = 3;
        assert!(spec.validate().is_err());
        let mut spec = FilterSpec::new(100.0);
        spec.high_hz = 50.0;
        assert!(spec.validate().is_err());
        let spec = FilterSpec::new(100.0);
        assert!(matches!(
            butterworth_bandpass(&[0.0; 12], &spec),
            Err(PreprocessError::TooShort { .. })
        ));
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&[1.0, 2.0, 3.0]).unwrap();
        let k = (1.5_f64).sqrt();
        assert!((z[0] + k).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - k).abs() < 1e-12);
        assert_eq!(zscore(&[5.0; 4]).unwrap(), vec![0.0; 4]);
        assert!(zscore(&[1.0]).is_err());
    }

    #[test]
    fn symmetric_pulse_keeps_its_apex() {
        let x: Vec<f64> = (0..600)
            .map(|i| (-0.5 * ((i as f64 - 300.0) / 4.0).powi(2)).exp())
            .collect();
        let y = butterworth_bandpass(&x, &FilterSpec::new(100.0)).unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .fold(0, |b, (i, &x)| if x > v[b] { i } else { b })
        };
        assert_eq!(argmax(&y), 300);
    }

    #[test]
    fn preprocessing_keeps_gt_on_local_maxima() {
        for seed in 0..10 {
            let seg = synthesize_segment(&SynthSpec::new(Modality::Ecg, 100.0, 1000, seed)).unwrap();
            let p = preprocess_segment(&seg, &FilterSpec::new(100.0)).unwrap();
            assert!(p.preprocessed);
            assert_eq!(p.gt_peaks, seg.gt_peaks);
            for &g in &p.gt_peaks {
                let lo = g.saturating_sub(2).max(1);
                let hi = (g + 2).min(p.samples.len() - 2);
                let found = (lo..=hi).any(|i| p.samples[i] > p.samples[i - 1] && p.samples[i] > p.samples[i + 1]);
                assert!(found, "seed {seed} gt {g}");
            }
            assert_eq!(
                preprocess_segment(&p, &FilterSpec::new(100.0)),
                Err(PreprocessError::AlreadyPreprocessed(p.segment_id.clone()))
            );
        }
    }

    #[test]
    fn flat_segment_becomes_zeros() {
        let mut seg = recording(1000);
        seg.samples = vec![3.0; 1000];
        let p = preprocess_segment(&seg, &FilterSpec::new(100.0)).unwrap();
        assert!(p.samples.iter().all(|&v| v == 0.0));
    }
}
