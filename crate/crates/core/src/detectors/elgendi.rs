//! Two-moving-average systolic peak detection.

use serde::{Deserialize, Serialize};

use super::{argmax, centered_moving_average, samples_of, DetectorConfig, DetectorError};
use crate::signal_io::SignalSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElgendiParams {
    /// Peak window, roughly one systolic upstroke.
    pub w1_ms: f64,
    /// Beat window, roughly one cardiac cycle.
    pub w2_ms: f64,
    pub beta: f64,
}

impl Default for ElgendiParams {
    fn default() -> Self {
        Self {
            w1_ms: 111.0,
            w2_ms: 667.0,
            beta: 0.02,
        }
    }
}

pub fn elgendi(seg: &SignalSegment, cfg: &DetectorConfig) -> Result<Vec<usize>, DetectorError> {
    let p = &cfg.elgendi;
    let x = &seg.samples;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let y: Vec<f64> = x.iter().map(|&v| v.max(0.0).powi(2)).collect();
    let w1 = samples_of(p.w1_ms / 1000.0, seg.fs);
    let w2 = samples_of(p.w2_ms / 1000.0, seg.fs);
    let ma_peak = centered_moving_average(&y, w1);
    let ma_beat = centered_moving_average(&y, w2);
    let offset = p.beta * y.iter().sum::<f64>() / y.len() as f64;

    let mut peaks = Vec::new();
    let mut start = None;
    for i in 0..=y.len() {
        let inside = i < y.len() && ma_peak[i] > ma_beat[i] + offset;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= w1 {
                    peaks.push(argmax(x, s, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    Ok(peaks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::Algorithm;
    use crate::preprocess::{preprocess_segment, FilterSpec};
    use crate::signal_io::{synthesize_segment, Modality, SynthSpec};

    fn cfg() -> DetectorConfig {
        DetectorConfig::for_algorithm(Algorithm::Elgendi)
    }

    fn clean_ppg() -> SignalSegment {
        let mut spec = SynthSpec::new(Modality::Ppg, 100.0, 900, 4);
        spec.mean_ibi_s = 1.05;
        let seg = synthesize_segment(&spec).unwrap();
        preprocess_segment(&seg, &FilterSpec::new(100.0)).unwrap()
    }

    #[test]
    fn finds_systolic_peaks() {
        let seg = clean_ppg();
        assert_eq!(seg.gt_peaks.len(), 8);
        let found = elgendi(&seg, &cfg()).unwrap();
        assert_eq!(found.len(), 8, "{found:?} vs {:?}", seg.gt_peaks);
        for (f, g) in found.iter().zip(&seg.gt_peaks) {
            assert!(f.abs_diff(*g) <= 2, "{f} vs {g}");
        }
    }

    #[test]
    fn negative_signal_has_no_energy() {
        let mut seg = clean_ppg();
        seg.samples = seg.samples.iter().map(|v| -v.abs() - 0.1).collect();
        assert!(elgendi(&seg, &cfg()).unwrap().is_empty());
    }

    #[test]
    fn huge_beta_suppresses_everything() {
        let mut c = cfg();
        c.elgendi.beta = f64::INFINITY;
        assert!(elgendi(&clean_ppg(), &c).unwrap().is_empty());
        c.elgendi.beta = 1e9;
        assert!(elgendi(&clean_ppg(), &c).unwrap().is_empty());
    }
}
