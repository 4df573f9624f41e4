//! Period-segmented J-peak detection.

use serde::{Deserialize, Serialize};

use super::{argmax, is_strict_local_max, samples_of, DetectorConfig, DetectorError};
use crate::signal_io::SignalSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChoiParams {
    pub min_lag_s: f64,
    pub max_lag_s: f64,
    /// Pairs closer than this fraction of the median interval are thinned.
    pub merge_fraction: f64,
}

impl Default for ChoiParams {
    fn default() -> Self {
        Self {
            min_lag_s: 0.4,
            max_lag_s: 2.0,
            merge_fraction: 0.5,
        }
    }
}

/// Beat period in samples: the highest interior local maximum of the
/// autocorrelation of the centred squared signal within the lag band.
pub fn estimate_period(x: &[f64], fs: f64, p: &ChoiParams) -> Result<usize, DetectorError> {
    let n = x.len();
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mean = sq.iter().sum::<f64>() / n.max(1) as f64;
    let y: Vec<f64> = sq.iter().map(|v| v - mean).collect();
    let lo = samples_of(p.min_lag_s, fs);
    let hi = samples_of(p.max_lag_s, fs).min(n.saturating_sub(2));
    if lo + 2 > hi {
        return Err(DetectorError::NoPeriodFound);
    }
    let acf = |lag: usize| -> f64 { y[..n - lag].iter().zip(&y[lag..]).map(|(a, b)| a * b).sum() };
    let r: Vec<f64> = (lo - 1..=hi).map(acf).collect();
    let mut best: Option<(usize, f64)> = None;
    for j in 1..r.len() - 1 {
        if r[j] > r[j - 1] && r[j] >= r[j + 1] && r[j] > 0.0 && best.is_none_or(|b| r[j] > b.1) {
            best = Some((lo - 1 + j, r[j]));
        }
    }
    best.map(|b| b.0).ok_or(DetectorError::NoPeriodFound)
}

pub fn choi(seg: &SignalSegment, cfg: &DetectorConfig) -> Result<Vec<usize>, DetectorError> {
    let x = &seg.samples;
    let n = x.len();
    let period = estimate_period(x, seg.fs, &cfg.choi)?;
    let mut peaks: Vec<usize> = (0..n)
        .step_by(period)
        .map(|s| argmax(x, s, (s + period).min(n)))
        .filter(|&i| is_strict_local_max(x, i))
        .collect();
    peaks.dedup();
    Ok(thin_close_pairs(x, peaks, cfg.choi.merge_fraction))
}

/// Repeatedly drops the weaker member of the closest pair while that pair is
/// nearer than `fraction` of the initial median interval.
pub(crate) fn thin_close_pairs(x: &[f64], mut peaks: Vec<usize>, fraction: f64) -> Vec<usize> {
    if peaks.len() < 3 {
        return peaks;
    }
    let mut gaps: Vec<usize> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_unstable();
    let m = gaps.len();
    let median = if m % 2 == 1 {
        gaps[m / 2] as f64
    } else {
        (gaps[m / 2 - 1] + gaps[m / 2]) as f64 / 2.0
    };
    let limit = fraction * median;
    while peaks.len() >= 2 {
        let (k, gap) = peaks
            .windows(2)
            .enumerate()
            .map(|(k, w)| (k, w[1] - w[0]))
            .fold((0, usize::MAX), |best, c| if c.1 < best.1 { c } else { best });
        if gap as f64 >= limit {
            break;
        }
        let drop = if x[peaks[k + 1]] > x[peaks[k]] { k } else { k + 1 };
        peaks.remove(drop);
    }
    peaks
}
