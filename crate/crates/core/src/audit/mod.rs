//! Rule-based audit of model answers and their explanations.
//!
//! Five checks are run against the representation the model saw:
//!
//! 1. the answered peak list equals the ground truth,
//! 2. every timestamp quoted in the explanation is one of the listed extrema,
//! 3. every quoted `(timestamp, amplitude)` pair matches the listed amplitude,
//! 4. every quoted "between A and B ... N seconds" interval matches `B - A`,
//! 5. the answer follows the template and carries the expected label.

use std::sync::LazyLock;

use regex_lite::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peak_representation::{index_to_timestamp, PeakRepresentation, RepError, Timestamp};
use crate::reward::{format_model_output, format_reward, parse_model_output, ModelOutput};

mod bundle;
mod labels;

pub use bundle::{build_audit_bundle, record_id, AuditBundle, AuditRecord, BundleSummary, BUNDLE_VERSION};
pub use labels::{read_label_log, record_label, replay_labels, HumanLabel, LabelEntry, LabelLog};

pub const DEFAULT_AMP_TOL: f64 = 0.005;
pub const DEFAULT_INTERVAL_TOL_SAMPLES: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("representation {rep} does not describe segment {segment}")]
    SegmentMismatch { rep: String, segment: String },
    #[error("inputs are not aligned: {0}")]
    Alignment(String),
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("label log line {line}: {reason}")]
    LogFormat { line: usize, reason: String },
    #[error("label log: {0}")]
    Io(String),
    #[error(transparent)]
    Representation(#[from] RepError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckTolerances {
    pub amp_tol: f64,
    pub interval_tol_samples: usize,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        Self {
            amp_tol: DEFAULT_AMP_TOL,
            interval_tol_samples: DEFAULT_INTERVAL_TOL_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub pass: bool,
    pub offenders: Vec<String>,
}

impl CheckOutcome {
    fn from_offenders(offenders: Vec<String>) -> Self {
        Self {
            pass: offenders.is_empty(),
            offenders,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheckReport {
    pub peak_list_matches_gt: CheckOutcome,
    pub all_timestamps_in_candidates: CheckOutcome,
    pub amplitudes_consistent: CheckOutcome,
    pub intervals_consistent: CheckOutcome,
    pub template_ok: CheckOutcome,
    pub overall: bool,
}

impl RuleCheckReport {
    pub const CHECK_NAMES: [&'static str; 5] = [
        "peak_list_matches_gt",
        "all_timestamps_in_candidates",
        "amplitudes_consistent",
        "intervals_consistent",
        "template_ok",
    ];

    pub fn checks(&self) -> [(&'static str, &CheckOutcome); 5] {
        [
            (Self::CHECK_NAMES[0], &self.peak_list_matches_gt),
            (Self::CHECK_NAMES[1], &self.all_timestamps_in_candidates),
            (Self::CHECK_NAMES[2], &self.amplitudes_consistent),
            (Self::CHECK_NAMES[3], &self.intervals_consistent),
            (Self::CHECK_NAMES[4], &self.template_ok),
        ]
    }

    pub fn failed_checks(&self) -> Vec<&'static str> {
        self.checks()
            .into_iter()
            .filter(|(_, c)| !c.pass)
            .map(|(n, _)| n)
            .collect()
    }
}

const TS: &str = r"\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}";
const NUM: &str = r"[-+]?\d+(?:\.\d+)?";

static TIMESTAMP: LazyLock<Regex> = LazyLock::new(|| Regex::new(TS).expect("valid regex"));
static AMPLITUDE_CLAIM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\(\s*({TS})\s*,\s*({NUM})\s*\)")).expect("valid regex"));
static INTERVAL_CLAIM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)between\s+({TS})\s+and\s+({TS})[^.;]*?\b({NUM})\s*(?:seconds|second|secs|sec|s)\b"
    ))
    .expect("valid regex")
});

fn peak_list_check(output: Option<&ModelOutput>, rep: &PeakRepresentation, gt: &[usize]) -> Result<CheckOutcome, AuditError> {
    let expected: Vec<Timestamp> = gt
        .iter()
        .map(|&g| index_to_timestamp(g, rep.ts_scale))
        .collect::<Result<_, _>>()?;
    let Some(out) = output else {
        return Ok(CheckOutcome::from_offenders(vec!["answer did not parse".into()]));
    };
    let mut offenders: Vec<String> = expected
        .iter()
        .filter(|t| !out.timestamps.contains(t))
        .map(|t| format!("missing {t}"))
        .collect();
    offenders.extend(
        out.timestamps
            .iter()
            .filter(|t| !expected.contains(t))
            .map(|t| format!("unexpected {t}")),
    );
    if offenders.is_empty() && out.timestamps != expected {
        offenders.push("peak list order or multiplicity differs".into());
    }
    Ok(CheckOutcome::from_offenders(offenders))
}

fn cited_timestamps_check(explanation: &str, rep: &PeakRepresentation) -> CheckOutcome {
    let offenders = TIMESTAMP
        .find_iter(explanation)
        .filter_map(|m| match m.as_str().parse::<Timestamp>() {
            Ok(t) if rep.find_by_timestamp(t).is_some() => None,
            Ok(t) => Some(format!("{t} is not a candidate extremum")),
            Err(_) => Some(format!("{} is not a valid timestamp", m.as_str())),
        })
        .collect();
    CheckOutcome::from_offenders(offenders)
}

/// Claims about timestamps outside the representation are left to the citation check.
fn amplitude_check(explanation: &str, rep: &PeakRepresentation, tol: f64) -> CheckOutcome {
    let offenders = AMPLITUDE_CLAIM
        .captures_iter(explanation)
        .filter_map(|c| {
            let t: Timestamp = c[1].parse().ok()?;
            let entry = rep.find_by_timestamp(t)?;
            let claimed: f64 = c[2].parse().ok()?;
            ((claimed - entry.amplitude).abs() > tol)
                .then(|| format!("({t}, {claimed}) but listed amplitude is {:.6}", entry.amplitude))
        })
        .collect();
    CheckOutcome::from_offenders(offenders)
}

fn interval_check(explanation: &str, rep: &PeakRepresentation, tol_samples: usize) -> CheckOutcome {
    let tol_s = tol_samples as f64 * rep.ts_scale.seconds_per_sample();
    let offenders = INTERVAL_CLAIM
        .captures_iter(explanation)
        .filter_map(|c| {
            let (Ok(a), Ok(b)) = (c[1].parse::<Timestamp>(), c[2].parse::<Timestamp>()) else {
                return Some(format!("unreadable interval claim {:?}", &c[0]));
            };
            let claimed: f64 = c[3].parse().ok()?;
            let actual = b.elapsed_seconds().abs_diff(a.elapsed_seconds()) as f64;
            ((claimed - actual).abs() > tol_s + 1e-9)
                .then(|| format!("between {a} and {b}: claimed {claimed} s, actual {actual} s"))
        })
        .collect();
    CheckOutcome::from_offenders(offenders)
}

/// Runs all five checks against the representation `rep` of the segment `segment_id`.
pub fn factual_consistency_check(
    raw_output: &str,
    expected_label: Option<&str>,
    rep: &PeakRepresentation,
    segment_id: &str,
    gt_peaks: &[usize],
    tol: &CheckTolerances,
) -> Result<RuleCheckReport, AuditError> {
    if rep.segment_ref != segment_id {
        return Err(AuditError::SegmentMismatch {
            rep: rep.segment_ref.clone(),
            segment: segment_id.to_string(),
        });
    }
    let outcome = parse_model_output(raw_output, expected_label);
    let output = outcome.result.as_ref().ok();
    let explanation = output.map_or("", |o| o.explanation.as_str());

    let template_ok = if format_reward(&outcome) == 1.0 {
        CheckOutcome::from_offenders(vec![])
    } else {
        let reason = match (&outcome.result, expected_label) {
            (Err(e), _) => e.to_string(),
            (Ok(o), _) if !o.is_monotone() => "timestamps not strictly increasing".into(),
            (Ok(o), Some(l)) => format!("label {} where {l} was expected", o.peak_label),
            (Ok(_), None) => "template violation".into(),
        };
        CheckOutcome::from_offenders(vec![reason])
    };

    let mut report = RuleCheckReport {
        peak_list_matches_gt: peak_list_check(output, rep, gt_peaks)?,
        all_timestamps_in_candidates: cited_timestamps_check(explanation, rep),
        amplitudes_consistent: amplitude_check(explanation, rep, tol.amp_tol),
        intervals_consistent: interval_check(explanation, rep, tol.interval_tol_samples),
        template_ok,
        overall: false,
    };
    report.overall = report.checks().iter().all(|(_, c)| c.pass);
    Ok(report)
}

/// A faithful answer for `gt`: the exact peak list, plus an explanation that
/// quotes the listed amplitude of every ground-truth peak present in `rep`
/// and the interval between the first two of them.
pub fn reference_output(rep: &PeakRepresentation, gt: &[usize], label: &str) -> Result<String, AuditError> {
    let timestamps: Vec<Timestamp> = gt
        .iter()
        .map(|&g| index_to_timestamp(g, rep.ts_scale))
        .collect::<Result<_, _>>()?;
    let cited: Vec<_> = timestamps.iter().filter_map(|&t| rep.find_by_timestamp(t)).collect();
    let explanation = if cited.is_empty() {
        "No listed extremum coincides with a dominant beat.".to_string()
    } else {
        let claims: Vec<String> = cited
            .iter()
            .map(|e| format!("({}, {:.6})", e.timestamp, e.amplitude))
            .collect();
        let mut text = format!("Dominant maxima at {}.", claims.join(", "));
        if let [a, b, ..] = cited.as_slice() {
            let gap = b.timestamp.elapsed_seconds() - a.timestamp.elapsed_seconds();
            text.push_str(&format!(
                " The interval between {} and {} is {gap} seconds.",
                a.timestamp, b.timestamp
            ));
        }
        text
    };
    Ok(format_model_output(label, &timestamps, &explanation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peak_representation::{represent, PolarityFilter, TsScale};
    use crate::preprocess::{preprocess_segment, FilterSpec};
    use crate::signal_io::{synthesize_segment, Modality, SignalSegment, SynthSpec};

    fn fixture() -> (SignalSegment, PeakRepresentation) {
        let seg = synthesize_segment(&SynthSpec::new(Modality::Bcg, 100.0, 1000, 5)).unwrap();
        let seg = preprocess_segment(&seg, &FilterSpec::new(100.0)).unwrap();
        let rep = represent(&seg, 0, PolarityFilter::Both, TsScale::ONE).unwrap();
        (seg, rep)
    }

    fn check(raw: &str, seg: &SignalSegment, rep: &PeakRepresentation) -> RuleCheckReport {
        factual_consistency_check(raw, Some("J"), rep, &seg.segment_id, &seg.gt_peaks, &CheckTolerances::default()).unwrap()
    }

    #[test]
    fn faithful_answer_passes() {
        let (seg, rep) = fixture();
        let raw = reference_output(&rep, &seg.gt_peaks, "J").unwrap();
        let r = check(&raw, &seg, &rep);
        assert!(r.overall, "{r:?}");
        assert!(raw.contains("interval between"));
    }

    #[test]
    fn each_fault_trips_its_own_check() {
        let (seg, rep) = fixture();
        let raw = reference_output(&rep, &seg.gt_peaks, "J").unwrap();
        let out = parse_model_output(&raw, None).result.unwrap();

        let dropped = format_model_output("J", &out.timestamps[1..], &out.explanation);
        assert_eq!(check(&dropped, &seg, &rep).failed_checks(), vec!["peak_list_matches_gt"]);

        let relabeled = format_model_output("R", &out.timestamps, &out.explanation);
        assert_eq!(check(&relabeled, &seg, &rep).failed_checks(), vec!["template_ok"]);

        let last = rep.find_by_timestamp(*out.timestamps.last().unwrap()).unwrap();
        let amp = format!("{:.6}", last.amplitude);
        let bumped = raw.replace(&amp, &format!("{:.6}", last.amplitude + 0.1));
        assert_eq!(check(&bumped, &seg, &rep).failed_checks(), vec!["amplitudes_consistent"]);

        let c = INTERVAL_CLAIM.captures(&out.explanation).unwrap();
        let n: u64 = c[3].parse().unwrap();
        let stretched = raw.replace(&format!("is {n} seconds"), &format!("is {} seconds", n + 5));
        assert_eq!(check(&stretched, &seg, &rep).failed_checks(), vec!["intervals_consistent"]);

        let moved = Timestamp::from_elapsed(last.timestamp.elapsed_seconds() + 1).unwrap();
        assert!(rep.find_by_timestamp(moved).is_none());
        let shifted = raw.replace(&format!("({}, ", last.timestamp), &format!("({moved}, "));
        let r = check(&shifted, &seg, &rep);
        assert_eq!(r.failed_checks(), vec!["all_timestamps_in_candidates"]);
        assert_eq!(r.all_timestamps_in_candidates.offenders.len(), 1);
    }

    #[test]
    fn quoted_amplitude_example() {
        let (seg, mut rep) = fixture();
        rep.entries[0].amplitude = 2.915030;
        let t = rep.entries[0].timestamp;
        let raw = format!("{{J: [] Explanation: peak ({t}, 2.915030) is small}}");
        let r = factual_consistency_check(&raw, Some("J"), &rep, &seg.segment_id, &[], &CheckTolerances::default());
        assert!(r.unwrap().amplitudes_consistent.pass);
    }

    #[test]
    fn unparsable_answer_fails_template_and_list() {
        let (seg, rep) = fixture();
        let r = check("I think there are peaks", &seg, &rep);
        assert_eq!(r.failed_checks(), vec!["peak_list_matches_gt", "template_ok"]);
    }

    #[test]
    fn mismatched_segment() {
        let (seg, rep) = fixture();
        let e = factual_consistency_check("J: []", None, &rep, "other", &seg.gt_peaks, &CheckTolerances::default());
        assert!(matches!(e, Err(AuditError::SegmentMismatch { .. })));
    }
}
