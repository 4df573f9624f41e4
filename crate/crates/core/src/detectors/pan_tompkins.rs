//! Pan-Tompkins QRS detection.

use serde::{Deserialize, Serialize};

use super::{argmax, centered_moving_average, samples_of, DetectorConfig, DetectorError};
use crate::peak_representation::{local_extrema, prune_by_distance, Polarity};
use crate::preprocess::{butterworth_bandpass, FilterSpec, PreprocessError};
use crate::signal_io::SignalSegment;

pub const MIN_FS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanTompkinsParams {
    pub low_hz: f64,
    pub high_hz: f64,
    pub integration_ms: f64,
    pub refractory_ms: f64,
    /// Missed-beat search starts once the gap exceeds this multiple of the running RR.
    pub searchback_factor: f64,
    /// Half-width of the window used to move a fiducial onto the signal apex.
    pub refine_ms: f64,
}

impl Default for PanTompkinsParams {
    fn default() -> Self {
        Self {
            low_hz: 5.0,
            high_hz: 15.0,
            integration_ms: 150.0,
            refractory_ms: 200.0,
            searchback_factor: 1.66,
            refine_ms: 75.0,
        }
    }
}

struct Thresholds {
    spki: f64,
    npki: f64,
}

impl Thresholds {
    fn primary(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }

    fn secondary(&self) -> f64 {
        0.5 * self.primary()
    }
}

pub fn pan_tompkins(seg: &SignalSegment, cfg: &DetectorConfig) -> Result<Vec<usize>, DetectorError> {
    let p = &cfg.pan_tompkins;
    let fs = seg.fs;
    if fs < MIN_FS {
        return Err(DetectorError::UnsupportedRate(fs, MIN_FS));
    }
    let x = &seg.samples;
    let n = x.len();
    let spec = FilterSpec {
        order: 2,
        low_hz: p.low_hz,
        high_hz: p.high_hz,
        fs,
        zero_phase: true,
    };
    let band = butterworth_bandpass(x, &spec).map_err(|e| match e {
        PreprocessError::TooShort { len, required } => DetectorError::TooShort { len, required },
        other => DetectorError::InvalidConfig(other.to_string()),
    })?;

    let at = |i: isize| band[i.clamp(0, n as isize - 1) as usize];
    let energy: Vec<f64> = (0..n as isize)
        .map(|i| {
            let d = (2.0 * (at(i + 1) - at(i - 1)) + at(i + 2) - at(i - 2)) * fs / 8.0;
            d * d
        })
        .collect();
    let mwi = centered_moving_average(&energy, samples_of(p.integration_ms / 1000.0, fs));

    let refractory = samples_of(p.refractory_ms / 1000.0, fs);
    let fiducials: Vec<(usize, f64)> = prune_by_distance(&local_extrema(&mwi), refractory)
        .into_iter()
        .filter(|e| e.polarity == Polarity::Max)
        .map(|e| (e.index, e.amplitude))
        .collect();

    let learn = samples_of(2.0, fs).min(n);
    let head = &mwi[..learn];
    let mut th = Thresholds {
        spki: 0.25 * head.iter().fold(0.0_f64, |m, &v| m.max(v)),
        npki: 0.5 * head.iter().sum::<f64>() / learn.max(1) as f64,
    };
    if th.spki <= 0.0 {
        return Ok(Vec::new());
    }

    let mut qrs: Vec<usize> = Vec::new();
    let mut rr: Vec<usize> = Vec::new();
    let mut noise: Vec<(usize, f64)> = Vec::new();

    let accept = |i: usize, qrs: &mut Vec<usize>, rr: &mut Vec<usize>| {
        if let Some(&last) = qrs.last() {
            rr.push(i - last);
            if rr.len() > 8 {
                rr.remove(0);
            }
        }
        qrs.push(i);
    };

    for &(i, peak) in &fiducials {
        if let (Some(&last), false) = (qrs.last(), rr.is_empty()) {
            let rr_avg = rr.iter().sum::<usize>() as f64 / rr.len() as f64;
            if (i - last) as f64 > p.searchback_factor * rr_avg {
                let missed = noise
                    .iter()
                    .filter(|&&(j, v)| j > last && j - last >= refractory && i - j >= refractory && v > th.secondary())
                    .fold(None::<(usize, f64)>, |best, &c| match best {
                        Some(b) if b.1 >= c.1 => Some(b),
                        _ => Some(c),
                    });
                if let Some((j, v)) = missed {
                    th.spki = 0.25 * v + 0.75 * th.spki;
                    accept(j, &mut qrs, &mut rr);
                }
            }
        }
        let clear = qrs.last().is_none_or(|&last| i - last >= refractory);
        if peak > th.primary() && clear {
            th.spki = 0.125 * peak + 0.875 * th.spki;
            accept(i, &mut qrs, &mut rr);
        } else {
            th.npki = 0.125 * peak + 0.875 * th.npki;
            noise.push((i, peak));
        }
    }

    let half = samples_of(p.refine_ms / 1000.0, fs);
    let mut out: Vec<usize> = qrs
        .iter()
        .map(|&i| argmax(x, i.saturating_sub(half), (i + half + 1).min(n)))
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{Algorithm, DetectorConfig};
    use crate::preprocess::preprocess_segment;
    use crate::signal_io::{synthesize_segment, Modality, SynthSpec};

    fn cfg() -> DetectorConfig {
        DetectorConfig::for_algorithm(Algorithm::PanTompkins)
    }

    #[test]
    fn finds_every_r_apex_on_clean_ecg() {
        let seg = synthesize_segment(&SynthSpec::new(Modality::Ecg, 100.0, 1000, 11)).unwrap();
        let gt = seg.gt_peaks.clone();
        assert_eq!(gt.len(), 10);
        let pre = preprocess_segment(&seg, &FilterSpec::new(100.0)).unwrap();
        let found = pan_tompkins(&pre, &cfg()).unwrap();
        assert_eq!(found.len(), gt.len(), "{found:?} vs {gt:?}");
        for (f, g) in found.iter().zip(&gt) {
            assert!(f.abs_diff(*g) <= 1, "{f} vs {g}");
        }
    }

    #[test]
    fn flat_segment_is_empty() {
        let mut seg = synthesize_segment(&SynthSpec::new(Modality::Ecg, 100.0, 1000, 0)).unwrap();
        seg.samples = vec![0.0; 1000];
        seg.preprocessed = true;
        assert!(pan_tompkins(&seg, &cfg()).unwrap().is_empty());
    }

    #[test]
    fn low_rate_is_rejected() {
        let mut seg = synthesize_segment(&SynthSpec::new(Modality::Ecg, 40.0, 400, 0)).unwrap();
        seg.preprocessed = true;
        assert_eq!(
            pan_tompkins(&seg, &cfg()),
            Err(DetectorError::UnsupportedRate(40.0, MIN_FS))
        );
    }
}
