//! Scoring: tolerance matching, P/R/F1, HR/HRV errors, folds, significance tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::DetectorError;

mod cv;
mod noise;
mod report;
mod stats;

pub use cv::{cv_split, FoldAssignment};
pub use noise::{add_noise, noise_sweep, SweepRow, DEFAULT_NOISE_SIGMAS};
pub use report::{
    aggregate_folds, score_segment, AggregateReport, MeanStd, ScoreReport, SCORE_CSV_HEADER, STATS_CSV_HEADER,
};
pub use stats::{student_t_two_tailed, welch_t_test, WelchResult};

/// Slack on tolerance comparisons so that e.g. 3 samples at 100 Hz counts as 30 ms.
const TOL_EPS_S: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{0} indices are not strictly increasing")]
    NotSorted(&'static str),
    #[error("invalid tolerance policy: {0}")]
    InvalidPolicy(String),
    #[error("not enough peaks for {0}")]
    InsufficientPeaks(Metric),
    #[error("ground truth has fewer than two peaks")]
    GroundTruthDegenerate,
    #[error("need at least {need} subjects, got {have}")]
    TooFewSubjects { have: usize, need: usize },
    #[error("samples need at least two values each and non-zero variance")]
    DegenerateSample,
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hr,
    Hrv,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Hr => "HR",
            Metric::Hrv => "HRV",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ToleranceKind {
    FixedMs,
    RelativeIbiPct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub kind: ToleranceKind,
    pub value: f64,
}

impl TolerancePolicy {
    pub fn fixed_ms(value: f64) -> Self {
        Self {
            kind: ToleranceKind::FixedMs,
            value,
        }
    }

    pub fn relative_pct(value: f64) -> Self {
        Self {
            kind: ToleranceKind::RelativeIbiPct,
            value,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.value.is_finite() && self.value > 0.0 {
            Ok(())
        } else {
            Err(EvalError::InvalidPolicy(format!("value must be positive, got {}", self.value)))
        }
    }

    /// Tolerance in seconds for every ground-truth peak.
    ///
    /// The relative policy scales the interval to the previous peak; the first
    /// peak uses the interval to the next one and a lone peak assumes 1 s.
    pub fn tolerances_s(&self, gt: &[usize], fs: f64) -> Vec<f64> {
        match self.kind {
            ToleranceKind::FixedMs => vec![self.value / 1000.0; gt.len()],
            ToleranceKind::RelativeIbiPct => (0..gt.len())
                .map(|k| {
                    let ibi = match (k.checked_sub(1), gt.get(k + 1)) {
                        (Some(prev), _) => (gt[k] - gt[prev]) as f64 / fs,
                        (None, Some(&next)) => (next - gt[k]) as f64 / fs,
                        (None, None) => 1.0,
                    };
                    self.value / 100.0 * ibi
                })
                .collect(),
        }
    }
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self::fixed_ms(30.0)
    }
}

impl fmt::Display for TolerancePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ToleranceKind::FixedMs => write!(f, "fixed:{}", self.value),
            ToleranceKind::RelativeIbiPct => write!(f, "relative:{}", self.value),
        }
    }
}

impl FromStr for TolerancePolicy {
    type Err = EvalError;

    /// Accepts `fixed:30`, `relative:5`, or a bare number of milliseconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::InvalidPolicy(s.to_string());
        let (kind, value) = match s.split_once(':') {
            Some((k, v)) => (k.trim().to_ascii_lowercase(), v),
            None => ("fixed".to_string(), s),
        };
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let policy = match kind.as_str() {
            "fixed" | "fixed_ms" => Self::fixed_ms(value),
            "relative" | "relative_ibi_pct" => Self::relative_pct(value),
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub delta_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Accepted pairs ordered by ground-truth index.
    pub pairs: Vec<MatchPair>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tolerance_s: Vec<f64>,
}

fn check_sorted(v: &[usize], what: &'static str) -> Result<(), EvalError> {
    if v.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(EvalError::NotSorted(what))
    }
}

/// One-to-one matching, greedy in ascending |Δ| with ties to the smaller
/// ground-truth then the smaller predicted index.
pub fn match_peaks(
    pred: &[usize],
    gt: &[usize],
    fs: f64,
    policy: &TolerancePolicy,
) -> Result<MatchResult, EvalError> {
    policy.validate()?;
    check_sorted(pred, "predicted")?;
    check_sorted(gt, "ground-truth")?;
    let tolerance_s = policy.tolerances_s(gt, fs);

    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (gi, (&g, &tol)) in gt.iter().zip(&tolerance_s).enumerate() {
        let reach = ((tol + TOL_EPS_S) * fs).floor() as usize;
        let lo = pred.partition_point(|&p| p + reach < g);
        for (pi, &p) in pred.iter().enumerate().skip(lo) {
            let d = p.abs_diff(g);
            if p > g && d > reach {
                break;
            }
            if d as f64 / fs <= tol + TOL_EPS_S {
                candidates.push((d, gi, pi));
            }
        }
    }
    candidates.sort_unstable();

    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (d, gi, pi) in candidates {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            let sign = if pred[pi] >= gt[gi] { 1.0 } else { -1.0 };
            pairs.push(MatchPair {
                pred: pred[pi],
                gt: gt[gi],
                delta_s: sign * d as f64 / fs,
            });
        }
    }
    pairs.sort_unstable_by_key(|p| p.gt);
    let tp = pairs.len();
    Ok(MatchResult {
        pairs,
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
        tolerance_s,
    })
}

/// Precision, recall and F1; every undefined ratio is 0.
pub fn prf(m: &MatchResult) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(m.tp, m.tp + m.fp);
    let r = ratio(m.tp, m.tp + m.fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Inter-beat intervals in seconds.
pub fn intervals(peaks: &[usize], fs: f64) -> Vec<f64> {
    peaks.windows(2).map(|w| (w[1] as f64 - w[0] as f64) / fs).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HrvStatistic {
    /// Sample standard deviation of the intervals.
    #[default]
    Sdnn,
    /// Root mean square of successive interval differences.
    Rmssd,
}

pub fn heart_rate(ibis: &[f64]) -> Result<f64, EvalError> {
    if ibis.is_empty() {
        return Err(EvalError::InsufficientPeaks(Metric::Hr));
    }
    Ok(60.0 * ibis.len() as f64 / ibis.iter().sum::<f64>())
}

/// HRV in milliseconds.
pub fn hrv(ibis: &[f64], stat: HrvStatistic) -> Result<f64, EvalError> {
    if ibis.len() < 2 {
        return Err(EvalError::InsufficientPeaks(Metric::Hrv));
    }
    let n = ibis.len() as f64;
    let s = match stat {
        HrvStatistic::Sdnn => {
            let mean = ibis.iter().sum::<f64>() / n;
            (ibis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
        HrvStatistic::Rmssd => {
            let diffs: Vec<f64> = ibis.windows(2).map(|w| w[1] - w[0]).collect();
            (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt()
        }
    };
    Ok(1000.0 * s)
}

/// HR in bpm and SDNN in ms.
pub fn hr_hrv(ibis: &[f64]) -> Result<(f64, f64), EvalError> {
    Ok((heart_rate(ibis)?, hrv(ibis, HrvStatistic::Sdnn)?))
}

/// Metrics left out of a segment's HR/HRV errors, and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Exclusions {
    /// Fewer than two predicted peaks.
    pub hr: bool,
    /// Fewer than three predicted peaks, or fewer than three ground-truth peaks.
    pub hrv: bool,
    /// Ground-truth HRV is zero, so a percentage error is undefined.
    pub hrv_mape: bool,
    /// Ground truth has fewer than two peaks.
    pub gt: bool,
}

impl Exclusions {
    pub fn any(&self) -> bool {
        self.hr || self.hrv || self.hrv_mape || self.gt
    }
}

impl fmt::Display for Exclusions {
    /// Pipe-separated flag names, empty when nothing is excluded.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.gt, "gt"),
            (self.hr, "hr"),
            (self.hrv, "hrv"),
            (self.hrv_mape, "hrv_mape"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        f.write_str(&names.join("|"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HrErrors {
    pub hr_mae_bpm: Option<f64>,
    pub hr_mape_pct: Option<f64>,
    pub hrv_mae_ms: Option<f64>,
    pub hrv_mape_pct: Option<f64>,
    pub excluded: Exclusions,
}

/// Absolute and percentage HR/HRV errors of one segment. Metrics that cannot
/// be computed from the prediction are flagged rather than penalised.
pub fn hr_hrv_errors(pred: &[usize], gt: &[usize], fs: f64, stat: HrvStatistic) -> Result<HrErrors, EvalError> {
    let gt_ibi = intervals(gt, fs);
    let pred_ibi = intervals(pred, fs);
    let gt_hr = heart_rate(&gt_ibi).map_err(|_| EvalError::GroundTruthDegenerate)?;
    let mut out = HrErrors::default();

    match heart_rate(&pred_ibi) {
        Ok(hr) => {
            out.hr_mae_bpm = Some((hr - gt_hr).abs());
            out.hr_mape_pct = Some(100.0 * (hr - gt_hr).abs() / gt_hr);
        }
        Err(_) => out.excluded.hr = true,
    }
    match (hrv(&pred_ibi, stat), hrv(&gt_ibi, stat)) {
        (Ok(p), Ok(g)) => {
            out.hrv_mae_ms = Some((p - g).abs());
            if g > 0.0 {
                out.hrv_mape_pct = Some(100.0 * (p - g).abs() / g);
            } else {
                out.excluded.hrv_mape = true;
            }
        }
        _ => out.excluded.hrv = true,
    }
    Ok(out)
}
