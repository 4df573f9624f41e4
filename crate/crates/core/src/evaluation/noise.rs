//! Robustness sweep under additive white Gaussian noise.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{score_segment, EvalError, HrvStatistic, ScoreReport, TolerancePolicy};
use crate::detectors::{detect, DetectorConfig};
use crate::rng;
use crate::signal_io::SignalSegment;

pub const DEFAULT_NOISE_SIGMAS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub report: ScoreReport,
}

/// Copy of `seg` with N(0, sigma²) added to every sample, drawn from sub-stream `stream` of `seed`.
pub fn add_noise(seg: &SignalSegment, sigma: f64, seed: u64, stream: u64) -> Result<SignalSegment, EvalError> {
    let mut out = seg.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| EvalError::InvalidPolicy(format!("noise sigma: {e}")))?;
    let mut r = rng::substream(seed, stream);
    for s in out.samples.iter_mut() {
        *s += normal.sample(&mut r);
    }
    Ok(out)
}

/// Scores `detector` on noisy copies of `seg`. A clean σ = 0 row always comes
/// first; row `k` draws its noise from sub-stream `k` of `seed`.
pub fn noise_sweep(
    seg: &SignalSegment,
    detector: &DetectorConfig,
    sigmas: &[f64],
    seed: u64,
    policy: &TolerancePolicy,
) -> Result<Vec<SweepRow>, EvalError> {
    std::iter::once(0.0)
        .chain(sigmas.iter().copied())
        .enumerate()
        .map(|(k, sigma)| {
            let noisy = add_noise(seg, sigma, seed, k as u64)?;
            let pred = detect(&noisy, detector)?;
            let report = score_segment(
                &seg.segment_id,
                detector.algorithm.as_str(),
                &pred,
                &seg.gt_peaks,
                seg.fs,
                policy,
                HrvStatistic::Sdnn,
            )?;
            Ok(SweepRow { sigma, report })
        })
        .collect()
}
