//! Human review labels and their append-only log.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AuditBundle, AuditError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HumanLabel {
    Concise,
    Ambiguous,
    Incorrect,
}

impl HumanLabel {
    pub const ALL: [HumanLabel; 3] = [HumanLabel::Concise, HumanLabel::Ambiguous, HumanLabel::Incorrect];

    pub fn as_str(self) -> &'static str {
        match self {
            HumanLabel::Concise => "CONCISE",
            HumanLabel::Ambiguous => "AMBIGUOUS",
            HumanLabel::Incorrect => "INCORRECT",
        }
    }
}

impl fmt::Display for HumanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HumanLabel {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HumanLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AuditError::InvalidLabel(s.to_string()))
    }
}

/// One line of the label log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub ts: DateTime<Utc>,
    pub record_id: String,
    pub reviewer_id: String,
    pub label: HumanLabel,
}

fn apply(bundle: &mut AuditBundle, entry: &LabelEntry) -> Result<(), AuditError> {
    let mut hit = false;
    for r in bundle.records.iter_mut().filter(|r| r.record_id == entry.record_id) {
        r.human_label = Some(entry.label);
        r.reviewer_id = Some(entry.reviewer_id.clone());
        r.labeled_at = Some(entry.ts);
        hit = true;
    }
    if hit {
        Ok(())
    } else {
        Err(AuditError::UnknownRecord(entry.record_id.clone()))
    }
}

/// Labels a record (every copy of it, if duplicated) and returns the log line
/// to append. Later labels replace earlier ones.
pub fn record_label(
    bundle: &mut AuditBundle,
    record_id: &str,
    label: &str,
    reviewer_id: &str,
    at: DateTime<Utc>,
) -> Result<LabelEntry, AuditError> {
    let label: HumanLabel = label.parse()?;
    if reviewer_id.trim().is_empty() {
        return Err(AuditError::InvalidLabel("reviewer_id must not be empty".into()));
    }
    let entry = LabelEntry {
        ts: at,
        record_id: record_id.to_string(),
        reviewer_id: reviewer_id.to_string(),
        label,
    };
    apply(bundle, &entry)?;
    bundle.refresh_summary();
    Ok(entry)
}

/// Applies logged labels in order on top of `bundle`.
pub fn replay_labels(bundle: &mut AuditBundle, entries: &[LabelEntry]) -> Result<(), AuditError> {
    for e in entries {
        apply(bundle, e)?;
    }
    bundle.refresh_summary();
    Ok(())
}

pub fn read_label_log(path: &Path) -> Result<Vec<LabelEntry>, AuditError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AuditError::Io(e.to_string())),
    };
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AuditError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| AuditError::LogFormat {
            line: k + 1,
            reason: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Append-only JSON-lines label log with a single writer.
#[derive(Debug)]
pub struct LabelLog {
    path: PathBuf,
    file: File,
}

impl LabelLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AuditError> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| AuditError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entry: &LabelEntry) -> Result<(), AuditError> {
        let mut line = serde_json::to_string(entry).map_err(|e| AuditError::Io(e.to_string()))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| AuditError::Io(e.to_string()))
    }

    pub fn entries(&self) -> Result<Vec<LabelEntry>, AuditError> {
        read_label_log(&self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{AuditRecord, BundleSummary, CheckOutcome, RuleCheckReport};
    use chrono::TimeZone;

    fn bundle() -> AuditBundle {
        let ok = CheckOutcome {
            pass: true,
            offenders: vec![],
        };
        let record = |id: &str| AuditRecord {
            record_id: id.into(),
            segment_ref: "s".into(),
            serialized_rep: String::new(),
            expected_label: None,
            raw_output: String::new(),
            model_output: None,
            rule_report: RuleCheckReport {
                peak_list_matches_gt: ok.clone(),
                all_timestamps_in_candidates: ok.clone(),
                amplitudes_consistent: ok.clone(),
                intervals_consistent: ok.clone(),
                template_ok: ok.clone(),
                overall: true,
            },
            human_label: None,
            reviewer_id: None,
            labeled_at: None,
        };
        let records = vec![record("a"), record("b")];
        AuditBundle {
            version: 1,
            bundle_id: "x".into(),
            summary: BundleSummary::tally(&records),
            records,
        }
    }

    fn at(sec: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, sec).unwrap()
    }

    #[test]
    fn label_then_relabel() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = LabelLog::open(dir.path().join("labels.jsonl")).unwrap();
        let mut b = bundle();

        let e = record_label(&mut b, "a", "concise", "rev1", at(0)).unwrap();
        log.append(&e).unwrap();
        assert_eq!(b.summary.labels[&HumanLabel::Concise], 1);

        let e = record_label(&mut b, "a", "AMBIGUOUS", "rev1", at(1)).unwrap();
        log.append(&e).unwrap();
        assert_eq!(b.summary.labels[&HumanLabel::Concise], 0);
        assert_eq!(b.summary.labels[&HumanLabel::Ambiguous], 1);
        assert_eq!(log.entries().unwrap().len(), 2);

        let mut fresh = bundle();
        replay_labels(&mut fresh, &log.entries().unwrap()).unwrap();
        assert_eq!(fresh.summary, b.summary);
        assert_eq!(fresh.records, b.records);
    }

    #[test]
    fn errors() {
        let mut b = bundle();
        assert_eq!(
            record_label(&mut b, "zzz", "CONCISE", "r", at(0)),
            Err(AuditError::UnknownRecord("zzz".into()))
        );
        assert!(matches!(
            record_label(&mut b, "a", "great", "r", at(0)),
            Err(AuditError::InvalidLabel(_))
        ));
        assert!(matches!(
            record_label(&mut b, "a", "CONCISE", " ", at(0)),
            Err(AuditError::InvalidLabel(_))
        ));
        assert_eq!(b.summary.unlabeled, 2);
    }

    #[test]
    fn log_line_shape() {
        let e = LabelEntry {
            ts: at(5),
            record_id: "a".into(),
            reviewer_id: "r".into(),
            label: HumanLabel::Incorrect,
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"ts":"2024-05-01T12:00:05Z","record_id":"a","reviewer_id":"r","label":"INCORRECT"}"#
        );
    }

    #[test]
    fn missing_log_is_empty_and_bad_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_label_log(&dir.path().join("none.jsonl")).unwrap().is_empty());
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"ts\":1}\n").unwrap();
        assert!(matches!(read_label_log(&p), Err(AuditError::LogFormat { line: 1, .. })));
    }
}
