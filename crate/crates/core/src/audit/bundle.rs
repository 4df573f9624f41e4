//! Review bundles: one record per (segment, representation, answer) triple.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::labels::HumanLabel;
use super::{factual_consistency_check, AuditError, CheckTolerances, RuleCheckReport};
use crate::peak_representation::{serialize, PeakRepresentation};
use crate::reward::{parse_model_output, ModelOutput};
use crate::signal_io::SignalSegment;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub record_id: String,
    pub segment_ref: String,
    pub serialized_rep: String,
    pub expected_label: Option<String>,
    pub raw_output: String,
    /// Absent when the answer does not parse.
    pub model_output: Option<ModelOutput>,
    pub rule_report: RuleCheckReport,
    pub human_label: Option<HumanLabel>,
    pub reviewer_id: Option<String>,
    pub labeled_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BundleSummary {
    pub records: usize,
    pub passed: usize,
    pub rejected: usize,
    /// Failures per check name.
    pub check_failures: BTreeMap<String, usize>,
    pub labels: BTreeMap<HumanLabel, usize>,
    pub unlabeled: usize,
    /// Records whose id already appeared earlier in the bundle.
    pub duplicates: usize,
}

impl BundleSummary {
    pub fn tally(records: &[AuditRecord]) -> Self {
        let mut s = Self {
            records: records.len(),
            check_failures: RuleCheckReport::CHECK_NAMES.iter().map(|n| (n.to_string(), 0)).collect(),
            labels: HumanLabel::ALL.iter().map(|&l| (l, 0)).collect(),
            ..Self::default()
        };
        let mut seen = std::collections::HashSet::new();
        for r in records {
            if r.rule_report.overall {
                s.passed += 1;
            } else {
                s.rejected += 1;
            }
            for name in r.rule_report.failed_checks() {
                *s.check_failures.entry(name.to_string()).or_default() += 1;
            }
            match r.human_label {
                Some(l) => *s.labels.entry(l).or_default() += 1,
                None => s.unlabeled += 1,
            }
            if !seen.insert(r.record_id.as_str()) {
                s.duplicates += 1;
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBundle {
    pub version: u32,
    pub bundle_id: String,
    pub records: Vec<AuditRecord>,
    pub summary: BundleSummary,
}

impl AuditBundle {
    pub fn refresh_summary(&mut self) {
        self.summary = BundleSummary::tally(&self.records);
    }

    pub fn record(&self, record_id: &str) -> Option<&AuditRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    /// Map from record id to every position holding it.
    pub fn positions(&self) -> HashMap<&str, Vec<usize>> {
        let mut out: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            out.entry(r.record_id.as_str()).or_default().push(i);
        }
        out
    }
}

fn sha256_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    format!("{:x}", h.finalize())
}

/// Stable id of a (segment, raw answer) pair.
pub fn record_id(segment_ref: &str, raw_output: &str) -> String {
    sha256_hex(&[segment_ref, raw_output])[..16].to_string()
}

pub fn build_audit_bundle(
    segments: &[SignalSegment],
    reps: &[PeakRepresentation],
    outputs: &[String],
    tol: &CheckTolerances,
) -> Result<AuditBundle, AuditError> {
    if segments.len() != reps.len() || reps.len() != outputs.len() {
        return Err(AuditError::Alignment(format!(
            "{} segments, {} representations, {} outputs",
            segments.len(),
            reps.len(),
            outputs.len()
        )));
    }
    let mut records = Vec::with_capacity(segments.len());
    for ((seg, rep), raw) in segments.iter().zip(reps).zip(outputs) {
        let label = seg.modality.peak_label();
        let rule_report = factual_consistency_check(raw, Some(label), rep, &seg.segment_id, &seg.gt_peaks, tol)?;
        records.push(AuditRecord {
            record_id: record_id(&seg.segment_id, raw),
            segment_ref: seg.segment_id.clone(),
            serialized_rep: serialize(rep),
            expected_label: Some(label.to_string()),
            raw_output: raw.clone(),
            model_output: parse_model_output(raw, Some(label)).result.ok(),
            rule_report,
            human_label: None,
            reviewer_id: None,
            labeled_at: None,
        });
    }
    let ids: Vec<&str> = records.iter().map(|r| r.record_id.as_str()).collect();
    let mut bundle = AuditBundle {
        version: BUNDLE_VERSION,
        bundle_id: sha256_hex(&ids)[..16].to_string(),
        records,
        summary: BundleSummary::default(),
    };
    bundle.refresh_summary();
    Ok(bundle)
}
