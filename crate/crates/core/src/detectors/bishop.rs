//! Multi-scale peak detection over a local maxima scalogram.

use serde::{Deserialize, Serialize};

use super::{DetectorConfig, DetectorError};
use crate::signal_io::SignalSegment;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BishopParams {
    /// Largest comparison scale; `None` uses half the segment.
    pub max_scale: Option<usize>,
}

/// Row `k - 1` marks samples that exceed both neighbours at distance `k`.
/// Samples whose neighbour at that distance lies outside the segment are left unmarked.
pub fn local_maxima_scalogram(x: &[f64], max_scale: usize) -> Vec<Vec<bool>> {
    let n = x.len();
    (1..=max_scale)
        .map(|k| {
            (0..n)
                .map(|i| i >= k && i + k < n && x[i] > x[i - k] && x[i] > x[i + k])
                .collect()
        })
        .collect()
}

/// Chooses the scale with the most marked samples (the smallest on ties) and
/// emits samples that beat every in-range neighbour at all scales up to it.
///
/// Scale selection only counts full comparisons, while emission ignores a
/// missing neighbour past the segment edge, so beats near either edge are
/// still reported.
pub fn bishop(seg: &SignalSegment, cfg: &DetectorConfig) -> Result<Vec<usize>, DetectorError> {
    let x = &seg.samples;
    let n = x.len();
    let auto = (n / 2).saturating_sub(1);
    let scales = cfg.bishop.max_scale.map_or(auto, |m| m.min(auto));
    if scales == 0 {
        return Err(DetectorError::TooShort { len: n, required: 4 });
    }
    let lms = local_maxima_scalogram(x, scales);
    let gamma = lms
        .iter()
        .map(|row| row.iter().filter(|&&b| b).count())
        .enumerate()
        .fold((0, 0), |best, (k, c)| if c > best.1 { (k, c) } else { best })
        .0
        + 1;

    let peaks = (0..n)
        .filter(|&i| lms[0][i])
        .filter(|&i| {
            (2..=gamma).all(|k| {
                let left = i < k || x[i] > x[i - k];
                let right = i + k >= n || x[i] > x[i + k];
                left && right
            })
        })
        .collect();
    Ok(peaks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::Algorithm;
    use crate::signal_io::Modality;
    use std::f64::consts::PI;

    fn seg(samples: Vec<f64>) -> SignalSegment {
        SignalSegment {
            segment_id: "b".into(),
            subject_id: "s".into(),
            modality: Modality::Ppg,
            fs: 100.0,
            samples,
            gt_peaks: vec![],
            preprocessed: true,
        }
    }

    fn cfg() -> DetectorConfig {
        DetectorConfig::for_algorithm(Algorithm::Bishop)
    }

    #[test]
    fn triangle_apex() {
        let x: Vec<f64> = (0..101).map(|i| 50.0 - (i as f64 - 37.0).abs()).collect();
        assert_eq!(bishop(&seg(x), &cfg()).unwrap(), vec![37]);
    }

    #[test]
    fn sinusoid_crests() {
        let x: Vec<f64> = (0..1000).map(|i| (2.0 * PI * i as f64 / 100.0).sin()).collect();
        let found = bishop(&seg(x), &cfg()).unwrap();
        assert_eq!(found.len(), 10, "{found:?}");
        for w in found.windows(2) {
            assert!(w[1] - w[0] >= 99 && w[1] - w[0] <= 101);
        }
    }

    #[test]
    fn ramp_is_empty() {
        let x: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert!(bishop(&seg(x), &cfg()).unwrap().is_empty());
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            bishop(&seg(vec![0.0, 1.0, 0.0]), &cfg()),
            Err(DetectorError::TooShort { .. })
        ));
    }

    #[test]
    fn scalogram_marks_in_range_only() {
        let lms = local_maxima_scalogram(&[0.0, 2.0, 1.0, 3.0, 0.0], 2);
        assert_eq!(lms[0], vec![false, true, false, true, false]);
        assert_eq!(lms[1], vec![false, false, true, false, false]);
    }
}
