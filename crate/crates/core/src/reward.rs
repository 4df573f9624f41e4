//! Reward for textual model answers of the form `{J: [ts, ...] Explanation: ...}`.
//!
//! The total is `α·r_format + β·r_detection + γ·r_complete + δ·r_hr`. An
//! answer that fails the format check scores zero on every other component.

use std::fmt;
use std::sync::LazyLock;

use regex_lite::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{heart_rate, intervals, match_peaks, prf, EvalError, TolerancePolicy};
use crate::peak_representation::{timestamp_to_index, Timestamp, TsScale};

pub const DEFAULT_TOL_MS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub peak_label: String,
    /// As written; ordering is checked by [`format_reward`], not by the parser.
    pub timestamps: Vec<Timestamp>,
    pub explanation: String,
    pub raw: String,
}

impl ModelOutput {
    pub fn is_monotone(&self) -> bool {
        self.timestamps.windows(2).all(|w| w[0] < w[1])
    }

    pub fn indices(&self, scale: TsScale) -> Vec<usize> {
        self.timestamps.iter().map(|&t| timestamp_to_index(t, scale)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseFailure {
    #[error("answer does not match `LABEL: [timestamps] Explanation: text`")]
    Grammar,
    #[error("bad timestamp {0:?}")]
    Timestamp(String),
}

/// Result of parsing one answer, together with the label it was expected to carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub result: Result<ModelOutput, ParseFailure>,
    pub expected_label: Option<String>,
}

static ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)^([A-Za-z][A-Za-z0-9_]*)\s*:\s*\[([^\]]*)\]\s*(?:Explanation\s*:(.*))?$").expect("valid regex")
});

/// Parses an answer; optional surrounding braces are dropped only as a pair.
pub fn parse_model_output(text: &str, expected_label: Option<&str>) -> ParseOutcome {
    ParseOutcome {
        result: parse_answer(text),
        expected_label: expected_label.map(str::to_string),
    }
}

fn parse_answer(text: &str) -> Result<ModelOutput, ParseFailure> {
    let trimmed = text.trim();
    let body = trimmed
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .unwrap_or(trimmed)
        .trim();
    let caps = ANSWER.captures(body).ok_or(ParseFailure::Grammar)?;
    let list = caps[2].trim();
    let timestamps = if list.is_empty() {
        Vec::new()
    } else {
        list.split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<Timestamp>().map_err(|_| ParseFailure::Timestamp(t.to_string()))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(ModelOutput {
        peak_label: caps[1].to_string(),
        timestamps,
        explanation: caps.get(3).map_or("", |m| m.as_str().trim()).to_string(),
        raw: text.to_string(),
    })
}

/// Canonical answer text; [`parse_model_output`] inverts it.
pub fn format_model_output(label: &str, timestamps: &[Timestamp], explanation: &str) -> String {
    let list = timestamps.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ");
    if explanation.is_empty() {
        format!("{{{label}: [{list}]}}")
    } else {
        format!("{{{label}: [{list}] Explanation: {explanation}}}")
    }
}

/// 1 when the answer parsed, lists strictly increasing timestamps and carries the expected label.
pub fn format_reward(outcome: &ParseOutcome) -> f64 {
    match &outcome.result {
        Ok(out) if out.is_monotone() => match &outcome.expected_label {
            Some(label) if *label != out.peak_label => 0.0,
            _ => 1.0,
        },
        _ => 0.0,
    }
}

/// F1 at a fixed tolerance; unsorted input scores 0.
pub fn detection_reward(pred: &[usize], gt: &[usize], fs: f64, tol_ms: f64) -> f64 {
    match_peaks(pred, gt, fs, &TolerancePolicy::fixed_ms(tol_ms))
        .map(|m| prf(&m).2)
        .unwrap_or(0.0)
}

pub fn complete_reward(n_pred: usize, n_gt: usize) -> f64 {
    (-(n_pred.abs_diff(n_gt) as f64)).exp()
}

/// `exp(-2·e)` with `e` the relative HR error capped at 1; fewer than two
/// predicted peaks count as the cap.
pub fn hr_consistency_reward(pred: &[usize], gt: &[usize], fs: f64) -> Result<f64, EvalError> {
    let gt_hr = heart_rate(&intervals(gt, fs)).map_err(|_| EvalError::GroundTruthDegenerate)?;
    let rel = match heart_rate(&intervals(pred, fs)) {
        Ok(hr) => ((hr - gt_hr).abs() / gt_hr).min(1.0),
        Err(_) => 1.0,
    };
    Ok((-2.0 * rel).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.6,
            gamma: 0.15,
            delta: 0.15,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("weight {name} must be non-negative, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r_format: f64,
    pub r_detection: f64,
    pub r_complete: f64,
    pub r_hr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    #[serde(flatten)]
    pub components: RewardComponents,
    pub total: f64,
    pub weights: RewardWeights,
}

impl fmt::Display for RewardBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.components;
        write!(
            f,
            "total {:.6} (format {}, detection {:.6}, complete {:.6}, hr {:.6})",
            self.total, c.r_format, c.r_detection, c.r_complete, c.r_hr
        )
    }
}

pub fn total_reward(components: RewardComponents, weights: RewardWeights) -> RewardBreakdown {
    let c = &components;
    RewardBreakdown {
        components,
        total: weights.alpha * c.r_format
            + weights.beta * c.r_detection
            + weights.gamma * c.r_complete
            + weights.delta * c.r_hr,
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSettings {
    pub weights: RewardWeights,
    pub tol_ms: f64,
}

impl Default for RewardSettings {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            tol_ms: DEFAULT_TOL_MS,
        }
    }
}

/// Scores a raw answer against ground-truth indices.
pub fn score_output(
    raw: &str,
    expected_label: Option<&str>,
    gt: &[usize],
    fs: f64,
    scale: TsScale,
    settings: &RewardSettings,
) -> Result<RewardBreakdown, EvalError> {
    let outcome = parse_model_output(raw, expected_label);
    let r_format = format_reward(&outcome);
    let components = match (&outcome.result, r_format > 0.0) {
        (Ok(out), true) => {
            let pred = out.indices(scale);
            RewardComponents {
                r_format,
                r_detection: detection_reward(&pred, gt, fs, settings.tol_ms),
                r_complete: complete_reward(pred.len(), gt.len()),
                r_hr: hr_consistency_reward(&pred, gt, fs)?,
            }
        }
        _ => {
            // Ground truth must still be usable even when the answer is not.
            heart_rate(&intervals(gt, fs)).map_err(|_| EvalError::GroundTruthDegenerate)?;
            RewardComponents::default()
        }
    };
    Ok(total_reward(components, settings.weights))
}

/// One line of a batch scoring file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub segment_id: String,
    pub raw_output: String,
    pub fs: f64,
    pub gt_peaks: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_label: Option<String>,
    /// Calendar seconds per sample used when the answer was produced; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_seconds_per_sample: Option<TsScale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResult {
    #[serde(flatten)]
    pub record: RewardRecord,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

pub fn score_record(record: &RewardRecord, settings: &RewardSettings) -> Result<RewardResult, EvalError> {
    let breakdown = score_output(
        &record.raw_output,
        record.expected_label.as_deref(),
        &record.gt_peaks,
        record.fs,
        record.ts_seconds_per_sample.unwrap_or_default(),
        settings,
    )?;
    Ok(RewardResult {
        record: record.clone(),
        breakdown,
    })
}
