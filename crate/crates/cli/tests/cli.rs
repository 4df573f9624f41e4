use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn peakrep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peakrep"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = peakrep(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not one JSON record: {text}"))
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Files under `root`, relative, excluding run manifests.
fn outputs(root: &Path) -> Vec<PathBuf> {
    let mut files = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".manifest.json") {
                files.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let (fa, fb) = (outputs(a), outputs(b));
    assert_eq!(fa, fb);
    assert!(!fa.is_empty());
    for f in fa {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{}", f.display());
    }
}

/// Synthesizes and preprocesses `count` segments; returns the preprocessed file.
fn prepared(dir: &Path, count: &str) -> &'static str {
    ok(dir, &["synth", "--count", count, "--subjects", "3", "--seed", "11", "--out", "raw"]);
    ok(dir, &["preprocess", "--segments", "raw/segments.jsonl", "--out", "pre"]);
    "pre/preprocessed.jsonl"
}

#[test]
fn synth_is_deterministic_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["synth", "--count", "3", "--seed", "4", "--out", "a"]);
    ok(d, &["synth", "--count", "3", "--seed", "4", "--out", "b", "--jobs", "1"]);
    ok(d, &["synth", "--count", "3", "--seed", "5", "--out", "c"]);
    assert_eq!(read(d, "a/segments.jsonl"), read(d, "b/segments.jsonl"));
    assert_ne!(read(d, "a/segments.jsonl"), read(d, "c/segments.jsonl"));
    let lines: Vec<Value> = read(d, "a/segments.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["segment_id"], "synth-ecg-0002");
    assert_eq!(lines[2]["samples"].as_array().unwrap().len(), 1000);
}

#[test]
fn detect_writes_one_row_per_segment_and_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let segs = prepared(d, "5");
    ok(d, &["cv-split", "--segments", segs, "--k", "3", "--out", "cv"]);
    ok(d, &["detect", "--segments", segs, "--folds", "cv/folds.json", "--out", "det", "--jobs", "4"]);
    for algo in ["pan_tompkins", "nabian", "elgendi", "bishop", "choi"] {
        let csv = read(d, &format!("det/detect/{algo}.csv"));
        assert_eq!(csv.lines().count(), 6, "{algo}");
        assert!(csv.starts_with("segment_id,detector,policy,"));
        assert_eq!(read(d, &format!("det/detect/{algo}.peaks.jsonl")).lines().count(), 5);
        let agg: Value = serde_json::from_str(&read(d, &format!("det/detect/{algo}.aggregate.json"))).unwrap();
        assert_eq!(agg["segments"], 5);
    }
    assert_eq!(read(d, "det/detect/summary.csv").lines().count(), 6);

    // Different worker count, same bytes.
    ok(d, &["detect", "--segments", segs, "--folds", "cv/folds.json", "--out", "det1", "--jobs", "1"]);
    assert_same_outputs(&d.join("det"), &d.join("det1"));

    // Re-running from the manifest reproduces every output.
    ok(d, &["--config", "det/detect.manifest.json", "detect", "--out", "det2"]);
    assert_same_outputs(&d.join("det"), &d.join("det2"));

    let manifest: Value = serde_json::from_str(&read(d, "det/detect.manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "detect");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 16);
    let inputs: Vec<&str> = manifest["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["path"].as_str().unwrap())
        .collect();
    assert_eq!(inputs, vec![segs, "cv/folds.json"]);

    ok(d, &["detect", "--segments", segs, "--algo", "choi,nabian", "--out", "two"]);
    assert_eq!(read(d, "two/detect/summary.csv").lines().count(), 3);
}

#[test]
fn single_detector_and_scoring_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let segs = prepared(d, "4");
    ok(d, &["detect", "--segments", segs, "--algo", "pan-tompkins", "--tolerance", "fixed:50", "--out", "det"]);
    ok(d, &[
        "score",
        "--segments",
        segs,
        "--predictions",
        "det/detect/pan_tompkins.peaks.jsonl",
        "--tolerance",
        "fixed:50",
        "--out",
        "sc",
    ]);
    assert_eq!(read(d, "sc/score.csv"), read(d, "det/detect/pan_tompkins.csv"));
    ok(d, &["stats", "--a", "det/detect/pan_tompkins.csv", "--b", "sc/score.csv", "--out", "st"]);
    let stats = read(d, "st/stats.csv");
    assert!(stats.starts_with("metric,t,dof,p\n"));
    assert_eq!(stats.lines().count(), 8);
}

#[test]
fn representation_commands() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let segs = prepared(d, "2");
    ok(d, &["represent", "--segments", segs, "--ts-scale", "2", "--out", "rep"]);
    let first: Value = serde_json::from_str(read(d, "rep/representations.jsonl").lines().next().unwrap()).unwrap();
    let text = first["serialized"].as_str().unwrap();
    assert!(text.starts_with("<TS_START>\n(2020-01-01 00:00:"));
    assert!(text.ends_with("<TS_END>"));

    ok(d, &["reconstruct", "--segments", segs, "--out", "rec"]);
    assert_eq!(read(d, "rec/fidelity.csv").lines().count(), 3);
    assert_eq!(read(d, "rec/reconstruct/synth-ecg-0000.csv").lines().count(), 1001);

    ok(d, &["sweep-distance", "--segments", segs, "--distances", "0,4,8", "--out", "sw"]);
    assert_eq!(read(d, "sw/sweep_distance.csv").lines().count(), 7);
    assert_eq!(read(d, "sw/sweep_distance_mean.csv").lines().count(), 4);

    ok(d, &["noise-sweep", "--segments", segs, "--algo", "choi", "--sigmas", "0.2", "--out", "ns"]);
    assert_eq!(read(d, "ns/noise_sweep.csv").lines().count(), 5);
}

#[test]
fn bad_invocations_exit_with_typed_codes_and_no_artifacts() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();

    let out = peakrep(d, &["detect", "--segmnts", "x.jsonl", "--out", "o1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["kind"], "config");
    assert!(!d.join("o1").exists());

    let out = peakrep(d, &["detect", "--segments", "missing.jsonl", "--out", "o2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("o2").exists());

    fs::write(d.join("bad.toml"), "sede = 3\n").unwrap();
    let out = peakrep(d, &["--config", "bad.toml", "synth", "--out", "o3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("o3").exists());

    ok(d, &["synth", "--count", "1", "--out", "raw"]);
    let out = peakrep(d, &["represent", "--segments", "raw/segments.jsonl", "--out", "o4"]);
    assert_eq!(out.status.code(), Some(3));
    let rec = error_record(&out);
    assert_eq!(rec["kind"], "data");
    assert_eq!(rec["exit_code"], 3);
    assert!(!d.join("o4").exists());

    let out = peakrep(d, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn config_file_drives_the_run() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(
        d.join("run.toml"),
        "seed = 3\nout = \"cfg-out\"\n[synth]\nmodality = \"PPG\"\ncount = 2\nfs = 50.0\nduration_samples = 400\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "synth"]);
    let seg: Value = serde_json::from_str(read(d, "cfg-out/segments.jsonl").lines().next().unwrap()).unwrap();
    assert_eq!(seg["modality"], "PPG");
    assert_eq!(seg["fs"], 50.0);
    assert_eq!(seg["segment_id"], "synth-ppg-0000");
    // Flags win over the file.
    ok(d, &["--config", "run.toml", "synth", "--count", "3", "--out", "more"]);
    assert_eq!(read(d, "more/segments.jsonl").lines().count(), 3);
}

#[test]
fn configured_detectors_are_the_default_selection() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let segs = prepared(d, "2");
    fs::write(d.join("det.toml"), "[[detectors]]\nalgorithm = \"ELGENDI\"\n").unwrap();
    ok(d, &["--config", "det.toml", "detect", "--segments", segs, "--out", "one"]);
    assert_eq!(read(d, "one/detect/summary.csv").lines().nth(1).unwrap().split(',').next(), Some("elgendi"));
    assert_eq!(read(d, "one/detect/summary.csv").lines().count(), 2);
    ok(d, &["--config", "det.toml", "detect", "--segments", segs, "--algo", "all", "--out", "every"]);
    assert_eq!(read(d, "every/detect/summary.csv").lines().count(), 6);
}

fn answers(d: &Path, segs: &str) {
    let mut lines = String::new();
    for (k, l) in read(d, segs).lines().enumerate() {
        let s: Value = serde_json::from_str(l).unwrap();
        let mut gt: Vec<u64> = s["gt_peaks"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        if k == 1 {
            gt.pop();
        }
        let ts: Vec<String> = gt
            .iter()
            .map(|&i| format!("2020-01-01 00:{:02}:{:02}", i / 60, i % 60))
            .collect();
        let raw = format!("R: [{}] Explanation: tall narrow peaks.", ts.join(", "));
        lines.push_str(&serde_json::json!({"segment_id": s["segment_id"], "raw_output": raw}).to_string());
        lines.push('\n');
    }
    fs::write(d.join("answers.jsonl"), lines).unwrap();
}

#[test]
fn audit_build_then_check_with_labels() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let segs = prepared(d, "3");
    answers(d, segs);
    ok(d, &["audit-build", "--segments", segs, "--answers", "answers.jsonl", "--out", "au"]);
    let bundle: Value = serde_json::from_str(&read(d, "au/bundle.json")).unwrap();
    assert_eq!(bundle["summary"]["records"], 3);
    assert_eq!(bundle["summary"]["passed"], 2);
    assert_eq!(bundle["summary"]["check_failures"]["peak_list_matches_gt"], 1);

    let id = bundle["records"][0]["record_id"].as_str().unwrap();
    let entry = serde_json::json!({"ts": "2024-05-01T12:00:00Z", "record_id": id, "reviewer_id": "ann", "label": "CONCISE"});
    fs::write(d.join("labels.jsonl"), format!("{entry}\n")).unwrap();
    ok(d, &["audit-check", "--segments", segs, "--bundle", "au/bundle.json", "--labels", "labels.jsonl", "--out", "ac"]);
    let summary: Value = serde_json::from_str(&read(d, "ac/audit_check.json")).unwrap();
    assert_eq!(summary["stale_reports"], serde_json::json!([]));
    assert_eq!(summary["summary"]["labels"]["CONCISE"], 1);
    assert!(read(d, "ac/audit_check.csv").contains(",true,CONCISE"));

    // A tampered rule report is caught.
    let mut tampered = bundle.clone();
    tampered["records"][1]["rule_report"]["overall"] = Value::Bool(true);
    fs::write(d.join("tampered.json"), tampered.to_string()).unwrap();
    let out = peakrep(d, &["audit-check", "--segments", segs, "--bundle", "tampered.json", "--out", "ac2"]);
    assert_eq!(out.status.code(), Some(3));
    let summary: Value = serde_json::from_str(&read(d, "ac2/audit_check.json")).unwrap();
    assert_eq!(summary["stale_reports"].as_array().unwrap().len(), 1);

    // Checking under different representation settings is refused.
    let out = peakrep(d, &["audit-check", "--segments", segs, "--bundle", "au/bundle.json", "--min-distance", "15", "--out", "ac3"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reward_batch() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(
        d.join("batch.jsonl"),
        concat!(
            r#"{"segment_id":"a","raw_output":"R: [2020-01-01 00:00:10, 2020-01-01 00:01:30, 2020-01-01 00:02:50]","fs":100.0,"gt_peaks":[10,90,170]}"#,
            "\n",
            r#"{"segment_id":"b","raw_output":"peaks at 10 and 90","fs":100.0,"gt_peaks":[10,90,170]}"#,
            "\n"
        ),
    )
    .unwrap();
    ok(d, &["reward", "--batch", "batch.jsonl", "--out", "rw"]);
    let rows: Vec<Value> = read(d, "rw/rewards.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!((rows[0]["total"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(rows[1]["total"], 0.0);
    assert_eq!(rows[1]["segment_id"], "b");
}
