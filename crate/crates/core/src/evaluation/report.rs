//! Per-segment score rows and fold aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{hr_hrv_errors, match_peaks, prf, EvalError, Exclusions, HrvStatistic, TolerancePolicy};

pub const SCORE_CSV_HEADER: &str =
    "segment_id,detector,policy,precision,recall,f1,hr_mae,hr_mape,hrv_mae,hrv_mape,excluded_flags";
pub const STATS_CSV_HEADER: &str = "metric,t,dof,p";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub segment_id: String,
    pub detector: String,
    pub policy: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hr_mae_bpm: Option<f64>,
    pub hr_mape_pct: Option<f64>,
    pub hrv_mae_ms: Option<f64>,
    pub hrv_mape_pct: Option<f64>,
    pub excluded: Exclusions,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ScoreReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.segment_id,
            self.detector,
            self.policy,
            self.precision,
            self.recall,
            self.f1,
            opt(self.hr_mae_bpm),
            opt(self.hr_mape_pct),
            opt(self.hrv_mae_ms),
            opt(self.hrv_mape_pct),
            self.excluded
        )
    }

    /// Metric values keyed by CSV column name; excluded metrics are absent.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("precision", self.precision), ("recall", self.recall), ("f1", self.f1)];
        for (name, v) in [
            ("hr_mae", self.hr_mae_bpm),
            ("hr_mape", self.hr_mape_pct),
            ("hrv_mae", self.hrv_mae_ms),
            ("hrv_mape", self.hrv_mape_pct),
        ] {
            if let Some(v) = v {
                out.push((name, v));
            }
        }
        out
    }
}

/// Scores one segment. A ground truth too short for HR still yields P/R/F1
/// and is flagged instead of failing.
pub fn score_segment(
    segment_id: &str,
    detector: &str,
    pred: &[usize],
    gt: &[usize],
    fs: f64,
    policy: &TolerancePolicy,
    hrv_stat: HrvStatistic,
) -> Result<ScoreReport, EvalError> {
    let m = match_peaks(pred, gt, fs, policy)?;
    let (precision, recall, f1) = prf(&m);
    let errors = match hr_hrv_errors(pred, gt, fs, hrv_stat) {
        Ok(e) => e,
        Err(EvalError::GroundTruthDegenerate) => super::HrErrors {
            excluded: Exclusions {
                gt: true,
                ..Exclusions::default()
            },
            ..super::HrErrors::default()
        },
        Err(e) => return Err(e),
    };
    Ok(ScoreReport {
        segment_id: segment_id.to_string(),
        detector: detector.to_string(),
        policy: policy.to_string(),
        precision,
        recall,
        f1,
        hr_mae_bpm: errors.hr_mae_bpm,
        hr_mape_pct: errors.hr_mape_pct,
        hrv_mae_ms: errors.hrv_mae_ms,
        hrv_mape_pct: errors.hrv_mape_pct,
        excluded: errors.excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation across folds; absent with a single fold.
    pub std: Option<f64>,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateReport {
    pub metrics: BTreeMap<String, MeanStd>,
    pub segments: usize,
    /// Segments carrying each exclusion flag.
    pub excluded: BTreeMap<String, usize>,
}

/// Averages each metric within a fold, then reports mean ± sample std over folds.
pub fn aggregate_folds(reports: &[(usize, ScoreReport)]) -> AggregateReport {
    let mut per_fold: BTreeMap<&str, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    let mut excluded: BTreeMap<String, usize> = BTreeMap::new();
    for (fold, r) in reports {
        for (name, v) in r.metrics() {
            let slot = per_fold.entry(name).or_default().entry(*fold).or_insert((0.0, 0));
            slot.0 += v;
            slot.1 += 1;
        }
        let flags = r.excluded.to_string();
        for flag in flags.split('|').filter(|f| !f.is_empty()) {
            *excluded.entry(flag.to_string()).or_default() += 1;
        }
    }
    let metrics = per_fold
        .into_iter()
        .map(|(name, folds)| {
            let means: Vec<f64> = folds.values().map(|(s, c)| s / *c as f64).collect();
            let n = means.len() as f64;
            let mean = means.iter().sum::<f64>() / n;
            let std = (means.len() > 1)
                .then(|| (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
            (
                name.to_string(),
                MeanStd {
                    mean,
                    std,
                    folds: means.len(),
                },
            )
        })
        .collect();
    AggregateReport {
        metrics,
        segments: reports.len(),
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_segment_row() {
        let gt = [10, 110, 210, 310];
        let r = score_segment("s1", "nabian", &gt, &gt, 100.0, &TolerancePolicy::default(), HrvStatistic::Sdnn).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.csv_row(), "s1,nabian,fixed:30,1,1,1,0,0,0,,hrv_mape");
        assert_eq!(SCORE_CSV_HEADER.split(',').count(), r.csv_row().split(',').count());
    }

    #[test]
    fn degenerate_ground_truth_is_flagged() {
        let r = score_segment("s", "d", &[5], &[5], 100.0, &TolerancePolicy::default(), HrvStatistic::Sdnn).unwrap();
        assert_eq!(r.f1, 1.0);
        assert!(r.excluded.gt);
        assert_eq!(r.hr_mae_bpm, None);
    }

    #[test]
    fn fold_aggregation() {
        let mk = |f1: f64, hr: Option<f64>| ScoreReport {
            segment_id: "x".into(),
            detector: "d".into(),
            policy: "fixed:30".into(),
            precision: f1,
            recall: f1,
            f1,
            hr_mae_bpm: hr,
            hr_mape_pct: None,
            hrv_mae_ms: None,
            hrv_mape_pct: None,
            excluded: Exclusions {
                hr: hr.is_none(),
                ..Exclusions::default()
            },
        };
        let agg = aggregate_folds(&[
            (0, mk(1.0, Some(2.0))),
            (0, mk(0.5, None)),
            (1, mk(0.25, Some(4.0))),
        ]);
        let f1 = agg.metrics["f1"];
        assert!((f1.mean - 0.5).abs() < 1e-12);
        assert!((f1.std.unwrap() - (0.125_f64).sqrt()).abs() < 1e-12);
        assert_eq!(agg.metrics["hr_mae"].mean, 3.0);
        assert_eq!(agg.excluded["hr"], 1);
        assert_eq!(agg.segments, 3);
    }
}
