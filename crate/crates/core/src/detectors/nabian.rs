//! Window-maximum detection with refractory merging.

use serde::{Deserialize, Serialize};

use super::{argmax, is_strict_local_max, merge_refractory, samples_of, DetectorConfig, DetectorError};
use crate::signal_io::SignalSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NabianParams {
    pub window_s: f64,
}

impl Default for NabianParams {
    fn default() -> Self {
        Self { window_s: 1.0 }
    }
}

/// A sample is a candidate when it is a strict local maximum and the leftmost
/// maximum of the window of `window_s` centred on it. Candidates closer than
/// the refractory period are then merged.
pub fn nabian(seg: &SignalSegment, cfg: &DetectorConfig) -> Result<Vec<usize>, DetectorError> {
    let x = &seg.samples;
    let n = x.len();
    let half = samples_of(cfg.nabian.window_s / 2.0, seg.fs);
    let candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| is_strict_local_max(x, i))
        .filter(|&i| argmax(x, i.saturating_sub(half), (i + half + 1).min(n)) == i)
        .collect();
    Ok(merge_refractory(x, &candidates, samples_of(cfg.refractory_s, seg.fs)))
}
