//! Dense reconstruction from a peak representation and fidelity metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peak_representation::{represent, PeakRepresentation, PolarityFilter, RepError, TsScale};
use crate::signal_io::SignalSegment;

/// Recall radius, matching the detection scoring tolerance.
pub const DEFAULT_RECALL_TOL_MS: f64 = 30.0;

/// Whole samples within `tol_ms` at `fs`.
pub fn recall_tol_samples(fs: f64, tol_ms: f64) -> usize {
    (tol_ms * fs / 1000.0 + 1e-9).floor() as usize
}

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("need at least two knots, got {0}")]
    TooFewKnots(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("original signal is flat; correlation undefined")]
    FlatInput,
    #[error("distances must be sorted ascending")]
    UnsortedDistances,
    #[error(transparent)]
    Representation(#[from] RepError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub mae: f64,
    pub rmse: f64,
    pub pearson_r: f64,
    pub retention: f64,
    pub prominent_recall: f64,
}

/// Natural cubic spline through `(x, y)` knots with strictly increasing `x`.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, ReconError> {
        let n = x.len();
        if n < 2 {
            return Err(ReconError::TooFewKnots(n));
        }
        if y.len() != n {
            return Err(ReconError::LengthMismatch(n, y.len()));
        }
        // Second derivatives m[i]; natural ends m[0] = m[n-1] = 0.
        let mut m = vec![0.0; n];
        if n > 2 {
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
            }
            // Thomas algorithm; off-diagonals are h[1..k].
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * h[i];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Spline through the representation's entries, anchored at both ends with
/// the supplied boundary samples, evaluated at `0..length`.
pub fn spline_reconstruct(
    rep: &PeakRepresentation,
    length: usize,
    boundary: Option<(f64, f64)>,
) -> Result<Vec<f64>, ReconError> {
    let mut knots: Vec<(usize, f64)> = Vec::with_capacity(rep.entries.len() + 2);
    if let Some((first, _)) = boundary {
        if rep.entries.first().is_none_or(|e| e.index != 0) {
            knots.push((0, first));
        }
    }
    knots.extend(rep.entries.iter().map(|e| (e.index, e.amplitude)));
    if let (Some((_, last)), Some(end)) = (boundary, length.checked_sub(1)) {
        if knots.last().is_none_or(|k| k.0 != end) {
            knots.push((end, last));
        }
    }
    let spline = NaturalSpline::new(
        knots.iter().map(|k| k.0 as f64).collect(),
        knots.iter().map(|k| k.1).collect(),
    )?;
    Ok((0..length).map(|i| spline.eval(i as f64)).collect())
}

/// Returns `(mae, rmse, pearson_r)`; correlation uses population moments.
pub fn fidelity_metrics(original: &[f64], recon: &[f64]) -> Result<(f64, f64, f64), ReconError> {
    if original.len() != recon.len() {
        return Err(ReconError::LengthMismatch(original.len(), recon.len()));
    }
    if original.len() < 2 {
        return Err(ReconError::TooFewKnots(original.len()));
    }
    let n = original.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (a, b) in original.iter().zip(recon) {
        let d = a - b;
        abs += d.abs();
        sq += d * d;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(original), mean(recon));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in original.iter().zip(recon) {
        cov += (a - ma) * (b - mb);
        va += (a - ma).powi(2);
        vb += (b - mb).powi(2);
    }
    if va / n < 1e-24 || vb / n < 1e-24 {
        return Err(ReconError::FlatInput);
    }
    let r = (cov / (va * vb).sqrt()).clamp(-1.0, 1.0);
    Ok((abs / n, (sq / n).sqrt(), r))
}

/// Fraction of ground-truth peaks with an entry within `tol_samples`; 1.0 when there are none.
pub fn prominent_peak_recall(rep: &PeakRepresentation, gt_peaks: &[usize], tol_samples: usize) -> f64 {
    if gt_peaks.is_empty() {
        return 1.0;
    }
    let idx = rep.indices();
    let hit = gt_peaks
        .iter()
        .filter(|&&g| {
            let lo = idx.partition_point(|&i| i + tol_samples < g);
            idx.get(lo).is_some_and(|&i| i <= g + tol_samples)
        })
        .count();
    hit as f64 / gt_peaks.len() as f64
}

/// Represents, reconstructs and scores `seg` at one distance.
pub fn fidelity_at(
    seg: &SignalSegment,
    min_distance: usize,
    tol_samples: usize,
) -> Result<FidelityReport, ReconError> {
    let rep = represent(seg, min_distance, PolarityFilter::Both, TsScale::ONE)?;
    let n = seg.samples.len();
    let boundary = (n > 0).then(|| (seg.samples[0], seg.samples[n - 1]));
    let recon = spline_reconstruct(&rep, n, boundary)?;
    let (mae, rmse, pearson_r) = fidelity_metrics(&seg.samples, &recon)?;
    Ok(FidelityReport {
        mae,
        rmse,
        pearson_r,
        retention: rep.entries.len() as f64 / n as f64,
        prominent_recall: prominent_peak_recall(&rep, &seg.gt_peaks, tol_samples),
    })
}

pub fn distance_sensitivity_sweep(
    seg: &SignalSegment,
    distances: &[usize],
    tol_samples: usize,
) -> Result<Vec<(usize, FidelityReport)>, ReconError> {
    if distances.windows(2).any(|w| w[0] > w[1]) {
        return Err(ReconError::UnsortedDistances);
    }
    distances
        .iter()
        .map(|&d| Ok((d, fidelity_at(seg, d, tol_samples)?)))
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "distance,retention,mae,rmse,pearson,recall";

pub fn sweep_csv_row(distance: usize, r: &FidelityReport) -> String {
    format!(
        "{distance},{},{},{},{},{}",
        r.retention, r.mae, r.rmse, r.pearson_r, r.prominent_recall
    )
}
