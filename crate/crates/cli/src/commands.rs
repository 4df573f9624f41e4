//! Subcommand bodies. Each one reads its inputs from the resolved config,
//! fans per-segment work out over the worker pool and writes outputs in input order.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use peakrep_core::audit::{
    build_audit_bundle, factual_consistency_check, read_label_log, replay_labels, AuditBundle, RuleCheckReport,
};
use peakrep_core::detectors::{detect, Algorithm, DetectorConfig};
use peakrep_core::evaluation::{
    aggregate_folds, cv_split, noise_sweep, score_segment, welch_t_test, EvalError, FoldAssignment, ScoreReport,
    SCORE_CSV_HEADER, STATS_CSV_HEADER,
};
use peakrep_core::peak_representation::{represent, retention_ratio, serialize, PeakRepresentation};
use peakrep_core::preprocess::preprocess_segment;
use peakrep_core::reconstruction::{
    distance_sensitivity_sweep, fidelity_metrics, prominent_peak_recall, spline_reconstruct, sweep_csv_row,
    FidelityReport, SWEEP_CSV_HEADER,
};
use peakrep_core::reward::{score_record, RewardRecord};
use peakrep_core::rng::derive_seed;
use peakrep_core::signal_io::{load_segments, sidecar_path, synthesize_segment, write_records, SegmentFormat};
use peakrep_core::{SignalSegment, SynthSpec};

use crate::cli::{parse_algorithms, Cli, Command};
use crate::config::{require, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::OutputDir;

/// Everything a subcommand needs: the resolved config and its worker pool.
pub struct Ctx {
    pub cfg: RunConfig,
    pool: rayon::ThreadPool,
    inputs: Vec<PathBuf>,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> CliResult<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cfg.jobs {
            builder = builder.num_threads(j);
        }
        let pool = builder
            .build()
            .map_err(|e| CliError::internal(format!("starting worker pool: {e}")))?;
        Ok(Self {
            cfg,
            pool,
            inputs: Vec::new(),
        })
    }

    /// Maps `f` over `items` on the pool. Results keep input order, and the
    /// first failing item (by position) is the one reported.
    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> CliResult<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> CliResult<R> + Sync + Send,
    {
        let results: Vec<CliResult<R>> = self.pool.install(|| items.par_iter().map(&f).collect());
        results.into_iter().collect()
    }

    pub fn input(&mut self, path: PathBuf) -> PathBuf {
        if !self.inputs.contains(&path) {
            self.inputs.push(path.clone());
        }
        path
    }

    fn required(&mut self, path: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        let p = require(path, key)?;
        Ok(self.input(p))
    }

    fn segments(&mut self) -> CliResult<Vec<SignalSegment>> {
        let path = self.required(&self.cfg.inputs.segments.clone(), "segments")?;
        let format = match self.cfg.inputs.csv.clone() {
            Some(c) => {
                let side = sidecar_path(&path);
                if side.exists() {
                    self.input(side);
                }
                SegmentFormat::Csv {
                    fs: c.fs,
                    modality: c.modality,
                    subject_id: c.subject_id,
                }
            }
            None => SegmentFormat::Records,
        };
        let segs = load_segments(&path, &format)?;
        let mut seen = std::collections::HashSet::new();
        for s in &segs {
            if !seen.insert(s.segment_id.as_str()) {
                return Err(CliError::data(format!("duplicate segment id {}", s.segment_id)));
            }
        }
        Ok(segs)
    }

    pub fn preprocessed_segments(&mut self) -> CliResult<Vec<SignalSegment>> {
        let segs = self.segments()?;
        if let Some(s) = segs.iter().find(|s| !s.preprocessed) {
            return Err(CliError::data(format!(
                "segment {} is not preprocessed; run `preprocess` first",
                s.segment_id
            )));
        }
        Ok(segs)
    }

    pub fn represent(&self, seg: &SignalSegment) -> CliResult<PeakRepresentation> {
        let r = &self.cfg.representation;
        represent(seg, r.min_distance, r.polarity, r.ts_scale)
            .map_err(|e| CliError::from(e).context(&seg.segment_id))
    }

    fn out(&self) -> CliResult<OutputDir> {
        OutputDir::create(&self.cfg.out)
    }

    pub fn bundle(&mut self) -> CliResult<AuditBundle> {
        let p = self.required(&self.cfg.inputs.bundle.clone(), "bundle")?;
        read_json(&p)
    }

    pub fn finish(&self, out: OutputDir, name: &str) -> CliResult<()> {
        out.finish(name, &self.cfg, &self.inputs)?;
        Ok(())
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.resolve_config()?;
    let mut ctx = Ctx::new(cfg)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Synth(_) => synth(&mut ctx, name),
        Command::Preprocess(_) => preprocess(&mut ctx, name),
        Command::Represent(_) => represent_cmd(&mut ctx, name),
        Command::Reconstruct(_) => reconstruct(&mut ctx, name),
        Command::SweepDistance(_) => sweep_distance(&mut ctx, name),
        Command::Detect(a) => {
            let algos = selected(&ctx.cfg, a.algo.as_deref())?;
            detect_cmd(&mut ctx, name, &algos)
        }
        Command::Score(_) => score(&mut ctx, name),
        Command::Stats(_) => stats(&mut ctx, name),
        Command::NoiseSweep(a) => {
            let algos = selected(&ctx.cfg, a.algo.as_deref())?;
            noise(&mut ctx, name, &algos)
        }
        Command::CvSplit(_) => cv(&mut ctx, name),
        Command::Reward(_) => reward(&mut ctx, name),
        Command::AuditBuild(_) => audit_build(&mut ctx, name),
        Command::AuditCheck(_) => audit_check(&mut ctx, name),
        Command::Serve(_) => crate::server::serve(&mut ctx, name),
    }
}

/// Detectors named by `--algo`, else those listed in the config.
fn selected(cfg: &RunConfig, algo: Option<&[String]>) -> CliResult<Vec<Algorithm>> {
    match algo {
        Some(values) => parse_algorithms(values),
        None if cfg.detectors.is_empty() => Err(CliError::config("no detectors configured")),
        None => parse_algorithms(&cfg.detectors.iter().map(|d| d.algorithm.as_str().to_string()).collect::<Vec<_>>()),
    }
}

/// File-system safe version of a segment id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn records_bytes(segs: &[SignalSegment]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_records(&mut buf, segs).map_err(|e| CliError::internal(format!("encoding segments: {e}")))?;
    Ok(buf)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn synth(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let s = ctx.cfg.synth.clone();
    let subjects = s.subjects.unwrap_or(s.count);
    let tag = s.modality.as_str().to_ascii_lowercase();
    let specs: Vec<SynthSpec> = (0..s.count)
        .map(|k| SynthSpec {
            modality: s.modality,
            fs: s.fs,
            duration_samples: s.duration_samples,
            mean_ibi_s: s.mean_ibi_s,
            ibi_jitter_frac: s.ibi_jitter_frac,
            amplitude_jitter_frac: s.amplitude_jitter_frac,
            noise_sigma: s.noise_sigma,
            morphology: None,
            rng_seed: derive_seed(ctx.cfg.seed, k as u64),
            segment_id: Some(format!("synth-{tag}-{k:04}")),
            subject_id: Some(format!("subject-{:03}", k % subjects)),
        })
        .collect();
    let segs = ctx.par_map(&specs, |spec| Ok(synthesize_segment(spec)?))?;
    let mut out = ctx.out()?;
    out.write("segments.jsonl", &records_bytes(&segs)?)?;
    ctx.finish(out, name)
}

fn preprocess(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.segments()?;
    let filter = ctx.cfg.filter.clone();
    let done = ctx.par_map(&segs, |s| {
        preprocess_segment(s, &filter.spec(s.fs)).map_err(|e| CliError::from(e).context(&s.segment_id))
    })?;
    let mut out = ctx.out()?;
    out.write("preprocessed.jsonl", &records_bytes(&done)?)?;
    ctx.finish(out, name)
}

#[derive(Serialize)]
struct RepRecord<'a> {
    segment_id: &'a str,
    retention: f64,
    serialized: String,
    representation: &'a PeakRepresentation,
}

fn represent_cmd(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.preprocessed_segments()?;
    let reps = ctx.par_map(&segs, |s| ctx.represent(s))?;
    let rows = segs
        .iter()
        .zip(&reps)
        .map(|(s, r)| {
            Ok(RepRecord {
                segment_id: &s.segment_id,
                retention: retention_ratio(r, s)?,
                serialized: serialize(r),
                representation: r,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = ctx.out()?;
    out.write_jsonl("representations.jsonl", &rows)?;
    ctx.finish(out, name)
}

fn reconstruct(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.preprocessed_segments()?;
    let results = ctx.par_map(&segs, |s| {
        let rep = ctx.represent(s)?;
        let n = s.samples.len();
        let boundary = (n > 0).then(|| (s.samples[0], s.samples[n - 1]));
        let wrap = |e| CliError::from(e).context(&s.segment_id);
        let recon = spline_reconstruct(&rep, n, boundary).map_err(wrap)?;
        let (mae, rmse, pearson_r) = fidelity_metrics(&s.samples, &recon).map_err(wrap)?;
        let tol = ctx.cfg.representation.recall_tol(s.fs);
        let report = FidelityReport {
            mae,
            rmse,
            pearson_r,
            retention: rep.entries.len() as f64 / n as f64,
            prominent_recall: prominent_peak_recall(&rep, &s.gt_peaks, tol),
        };
        Ok((recon, report))
    })?;
    let mut out = ctx.out()?;
    let d = ctx.cfg.representation.min_distance;
    let mut fidelity = Vec::with_capacity(segs.len());
    for (s, (recon, report)) in segs.iter().zip(&results) {
        let rows = s
            .samples
            .iter()
            .zip(recon)
            .enumerate()
            .map(|(i, (a, b))| format!("{i},{a},{b}"));
        out.write_lines(
            &format!("reconstruct/{}.csv", file_stem(&s.segment_id)),
            Some("index,original,reconstructed"),
            rows,
        )?;
        fidelity.push(format!("{},{}", s.segment_id, sweep_csv_row(d, report)));
    }
    out.write_lines("fidelity.csv", Some(&format!("segment_id,{SWEEP_CSV_HEADER}")), fidelity)?;
    ctx.finish(out, name)
}

fn sweep_distance(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.preprocessed_segments()?;
    let distances = ctx.cfg.representation.distances.clone();
    let sweeps = ctx.par_map(&segs, |s| {
        let tol = ctx.cfg.representation.recall_tol(s.fs);
        distance_sensitivity_sweep(s, &distances, tol).map_err(|e| CliError::from(e).context(&s.segment_id))
    })?;
    let mut rows = Vec::new();
    let mut by_modality: BTreeMap<(&str, usize), Vec<&FidelityReport>> = BTreeMap::new();
    for (s, sweep) in segs.iter().zip(&sweeps) {
        for (d, r) in sweep {
            rows.push(format!("{},{}", s.segment_id, sweep_csv_row(*d, r)));
            by_modality.entry((s.modality.as_str(), *d)).or_default().push(r);
        }
    }
    let means = by_modality.iter().map(|((m, d), rs)| {
        let avg = FidelityReport {
            mae: mean(rs.iter().map(|r| r.mae)),
            rmse: mean(rs.iter().map(|r| r.rmse)),
            pearson_r: mean(rs.iter().map(|r| r.pearson_r)),
            retention: mean(rs.iter().map(|r| r.retention)),
            prominent_recall: mean(rs.iter().map(|r| r.prominent_recall)),
        };
        format!("{m},{}", sweep_csv_row(*d, &avg))
    });
    let mut out = ctx.out()?;
    out.write_lines("sweep_distance.csv", Some(&format!("segment_id,{SWEEP_CSV_HEADER}")), &rows)?;
    out.write_lines("sweep_distance_mean.csv", Some(&format!("modality,{SWEEP_CSV_HEADER}")), means)?;
    ctx.finish(out, name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub segment_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<String>,
    pub peaks: Vec<usize>,
}

const SUMMARY_HEADER: &str = "detector,segments,precision,recall,f1,hr_mae,hr_mape,hrv_mae,hrv_mape";

/// Mean of every metric over the segments where it is defined.
fn summary_row(detector: &str, reports: &[&ScoreReport]) -> String {
    let col = |name: &str| {
        let vals: Vec<f64> = reports
            .iter()
            .flat_map(|r| r.metrics())
            .filter(|(k, _)| *k == name)
            .map(|(_, v)| v)
            .collect();
        if vals.is_empty() {
            String::new()
        } else {
            mean(vals).to_string()
        }
    };
    let cols: Vec<String> = ["precision", "recall", "f1", "hr_mae", "hr_mape", "hrv_mae", "hrv_mape"]
        .iter()
        .map(|m| col(m))
        .collect();
    format!("{detector},{},{}", reports.len(), cols.join(","))
}

fn folds(ctx: &mut Ctx) -> CliResult<Option<FoldAssignment>> {
    match ctx.cfg.inputs.folds.clone() {
        None => Ok(None),
        Some(p) => {
            let p = ctx.required(&Some(p), "folds")?;
            Ok(Some(read_json(&p)?))
        }
    }
}

fn fold_aggregate(
    folds: &FoldAssignment,
    segs: &[SignalSegment],
    reports: &[ScoreReport],
) -> CliResult<peakrep_core::evaluation::AggregateReport> {
    let tagged = segs
        .iter()
        .zip(reports)
        .map(|(s, r)| {
            folds
                .fold_of(&s.subject_id)
                .map(|f| (f, r.clone()))
                .ok_or_else(|| CliError::data(format!("subject {} has no fold", s.subject_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(aggregate_folds(&tagged))
}

fn score_one(ctx: &Ctx, s: &SignalSegment, detector: &str, pred: &[usize]) -> CliResult<ScoreReport> {
    score_segment(
        &s.segment_id,
        detector,
        pred,
        &s.gt_peaks,
        s.fs,
        &ctx.cfg.tolerance,
        ctx.cfg.hrv_statistic,
    )
    .map_err(|e| CliError::from(e).context(&s.segment_id))
}

fn detect_cmd(ctx: &mut Ctx, name: &str, algos: &[Algorithm]) -> CliResult<()> {
    let segs = ctx.preprocessed_segments()?;
    let folds = folds(ctx)?;
    let detectors = ctx.cfg.detectors_for(algos);
    let mut out = ctx.out()?;
    let mut summary = Vec::new();
    for det in &detectors {
        let algo = det.algorithm.as_str();
        let results = ctx.par_map(&segs, |s| {
            let pred = detect(s, det).map_err(|e| CliError::from(e).context(&s.segment_id))?;
            let report = score_one(ctx, s, algo, &pred)?;
            Ok((pred, report))
        })?;
        let (preds, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let key = algo.to_ascii_lowercase();
        out.write_lines(
            &format!("detect/{key}.csv"),
            Some(SCORE_CSV_HEADER),
            reports.iter().map(ScoreReport::csv_row),
        )?;
        let peaks: Vec<Prediction> = segs
            .iter()
            .zip(preds)
            .map(|(s, peaks)| Prediction {
                segment_id: s.segment_id.clone(),
                detector: Some(algo.to_string()),
                peaks,
            })
            .collect();
        out.write_jsonl(&format!("detect/{key}.peaks.jsonl"), &peaks)?;
        if let Some(f) = &folds {
            out.write_json(&format!("detect/{key}.aggregate.json"), &fold_aggregate(f, &segs, &reports)?)?;
        }
        summary.push(summary_row(algo, &reports.iter().collect::<Vec<_>>()));
    }
    out.write_lines("detect/summary.csv", Some(SUMMARY_HEADER), summary)?;
    ctx.finish(out, name)
}

fn score(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.segments()?;
    let path = ctx.required(&ctx.cfg.inputs.predictions.clone(), "predictions")?;
    let preds: Vec<Prediction> = read_jsonl(&path)?;
    let folds = folds(ctx)?;
    let by_id: HashMap<&str, &SignalSegment> = segs.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    let pairs = preds
        .iter()
        .map(|p| {
            by_id
                .get(p.segment_id.as_str())
                .map(|s| (*s, p))
                .ok_or_else(|| CliError::data(format!("prediction for unknown segment {}", p.segment_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let reports = ctx.par_map(&pairs, |(s, p)| {
        score_one(ctx, s, p.detector.as_deref().unwrap_or("external"), &p.peaks)
    })?;
    let mut out = ctx.out()?;
    out.write_lines("score.csv", Some(SCORE_CSV_HEADER), reports.iter().map(ScoreReport::csv_row))?;
    let mut by_det: BTreeMap<&str, Vec<&ScoreReport>> = BTreeMap::new();
    for r in &reports {
        by_det.entry(&r.detector).or_default().push(r);
    }
    out.write_lines(
        "score_summary.csv",
        Some(SUMMARY_HEADER),
        by_det.iter().map(|(d, rs)| summary_row(d, rs)),
    )?;
    if let Some(f) = &folds {
        let segs_in_order: Vec<SignalSegment> = pairs.iter().map(|(s, _)| (*s).clone()).collect();
        out.write_json("score_aggregate.json", &fold_aggregate(f, &segs_in_order, &reports)?)?;
    }
    ctx.finish(out, name)
}

/// Metric columns of a score CSV, keyed by header name; blank cells are skipped.
pub fn read_score_columns(path: &Path) -> CliResult<BTreeMap<String, Vec<f64>>> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.join(",") != SCORE_CSV_HEADER {
        return Err(CliError::data(format!("{}: not a score file", path.display())));
    }
    let metric_cols = 3..header.len() - 1;
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(CliError::data(format!("{} line {}: wrong column count", path.display(), i + 2)));
        }
        for c in metric_cols.clone() {
            if cells[c].is_empty() {
                continue;
            }
            let v: f64 = cells[c]
                .parse()
                .map_err(|_| CliError::data(format!("{} line {}: bad number {:?}", path.display(), i + 2, cells[c])))?;
            cols.entry(header[c].to_string()).or_default().push(v);
        }
    }
    Ok(cols)
}

fn stats(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let a = ctx.required(&ctx.cfg.inputs.score_a.clone(), "score_a")?;
    let b = ctx.required(&ctx.cfg.inputs.score_b.clone(), "score_b")?;
    let (ca, cb) = (read_score_columns(&a)?, read_score_columns(&b)?);
    let mut rows = Vec::new();
    for metric in SCORE_CSV_HEADER.split(',').skip(3).take(7) {
        let empty = Vec::new();
        let (xa, xb) = (ca.get(metric).unwrap_or(&empty), cb.get(metric).unwrap_or(&empty));
        match welch_t_test(xa, xb) {
            Ok(w) => rows.push(format!("{metric},{},{},{}", w.t_stat, w.dof, w.p_two_tailed)),
            // Too few values or zero variance in both groups: no test.
            Err(EvalError::DegenerateSample) => rows.push(format!("{metric},,,")),
            Err(e) => return Err(e.into()),
        }
    }
    let mut out = ctx.out()?;
    out.write_lines("stats.csv", Some(STATS_CSV_HEADER), rows)?;
    ctx.finish(out, name)
}

fn noise(ctx: &mut Ctx, name: &str, algos: &[Algorithm]) -> CliResult<()> {
    let segs = ctx.preprocessed_segments()?;
    let detectors: Vec<DetectorConfig> = ctx.cfg.detectors_for(algos);
    let indexed: Vec<(usize, &SignalSegment)> = segs.iter().enumerate().collect();
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for det in &detectors {
        let sweeps = ctx.par_map(&indexed, |(k, s)| {
            noise_sweep(
                s,
                det,
                &ctx.cfg.noise.sigmas,
                derive_seed(ctx.cfg.seed, *k as u64),
                &ctx.cfg.tolerance,
            )
            .map_err(|e| CliError::from(e).context(&s.segment_id))
        })?;
        let mut by_sigma: Vec<(f64, Vec<&ScoreReport>)> = Vec::new();
        for sweep in &sweeps {
            for (i, row) in sweep.iter().enumerate() {
                rows.push(format!("{},{}", row.sigma, row.report.csv_row()));
                if by_sigma.len() <= i {
                    by_sigma.push((row.sigma, Vec::new()));
                }
                by_sigma[i].1.push(&row.report);
            }
        }
        for (sigma, reports) in &by_sigma {
            means.push(format!("{sigma},{}", summary_row(det.algorithm.as_str(), reports)));
        }
    }
    let mut out = ctx.out()?;
    out.write_lines("noise_sweep.csv", Some(&format!("sigma,{SCORE_CSV_HEADER}")), rows)?;
    out.write_lines("noise_sweep_mean.csv", Some(&format!("sigma,{SUMMARY_HEADER}")), means)?;
    ctx.finish(out, name)
}

fn cv(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.segments()?;
    let subjects: Vec<&str> = segs.iter().map(|s| s.subject_id.as_str()).collect();
    let folds = cv_split(&subjects, ctx.cfg.cv.k, ctx.cfg.seed)?;
    let mut out = ctx.out()?;
    out.write_json("folds.json", &folds)?;
    out.write_lines(
        "folds.csv",
        Some("subject_id,fold"),
        folds.folds.iter().map(|(s, f)| format!("{s},{f}")),
    )?;
    ctx.finish(out, name)
}

fn reward(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let path = ctx.required(&ctx.cfg.inputs.reward_batch.clone(), "reward_batch")?;
    let records: Vec<RewardRecord> = read_jsonl(&path)?;
    let settings = ctx.cfg.reward;
    let results = ctx.par_map(&records, |r| {
        score_record(r, &settings).map_err(|e| CliError::from(e).context(&r.segment_id))
    })?;
    let mut out = ctx.out()?;
    out.write_jsonl("rewards.jsonl", &results)?;
    ctx.finish(out, name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub segment_id: String,
    pub raw_output: String,
}

fn checks_row(id: &str, seg: &str, report: &RuleCheckReport) -> String {
    format!("{id},{seg},{},{}", report.overall, report.failed_checks().join("|"))
}

fn audit_build(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.preprocessed_segments()?;
    let path = ctx.required(&ctx.cfg.inputs.answers.clone(), "answers")?;
    let answers: Vec<Answer> = read_jsonl(&path)?;
    let by_id: HashMap<&str, &SignalSegment> = segs.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    let chosen = answers
        .iter()
        .map(|a| {
            by_id
                .get(a.segment_id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| CliError::data(format!("answer for unknown segment {}", a.segment_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let reps = ctx.par_map(&chosen, |s| ctx.represent(s))?;
    let raws: Vec<String> = answers.iter().map(|a| a.raw_output.clone()).collect();
    let bundle = build_audit_bundle(&chosen, &reps, &raws, &ctx.cfg.audit)?;
    let mut out = ctx.out()?;
    out.write_json("bundle.json", &bundle)?;
    out.write_lines(
        "audit_checks.csv",
        Some("record_id,segment_id,overall,failed_checks"),
        bundle
            .records
            .iter()
            .map(|r| checks_row(&r.record_id, &r.segment_ref, &r.rule_report)),
    )?;
    ctx.finish(out, name)
}

/// Recomputes the representation of every segment a bundle cites and checks
/// it against the text stored in the bundle.
pub fn bundle_reps(
    ctx: &Ctx,
    bundle: &AuditBundle,
    segs: &[SignalSegment],
) -> CliResult<HashMap<String, PeakRepresentation>> {
    let by_id: HashMap<&str, &SignalSegment> = segs.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    let mut reps = HashMap::new();
    for r in &bundle.records {
        if reps.contains_key(&r.segment_ref) {
            continue;
        }
        let seg = by_id
            .get(r.segment_ref.as_str())
            .ok_or_else(|| CliError::data(format!("bundle cites unknown segment {}", r.segment_ref)))?;
        let rep = ctx.represent(seg)?;
        if serialize(&rep) != r.serialized_rep {
            return Err(CliError::data(format!(
                "segment {}: representation differs from the bundle; check representation settings",
                r.segment_ref
            )));
        }
        reps.insert(r.segment_ref.clone(), rep);
    }
    Ok(reps)
}

#[derive(Serialize)]
struct CheckSummary<'a> {
    bundle_id: &'a str,
    records: usize,
    /// Records whose stored rule report differs from a fresh check.
    stale_reports: Vec<&'a str>,
    summary: &'a peakrep_core::audit::BundleSummary,
}

fn audit_check(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let segs = ctx.preprocessed_segments()?;
    let mut bundle = ctx.bundle()?;
    let reps = bundle_reps(ctx, &bundle, &segs)?;
    let by_id: HashMap<&str, &SignalSegment> = segs.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    let fresh = ctx.par_map(&bundle.records, |r| {
        let seg = by_id[r.segment_ref.as_str()];
        Ok(factual_consistency_check(
            &r.raw_output,
            r.expected_label.as_deref(),
            &reps[&r.segment_ref],
            &seg.segment_id,
            &seg.gt_peaks,
            &ctx.cfg.audit,
        )?)
    })?;
    if let Some(p) = ctx.cfg.inputs.labels.clone() {
        let p = ctx.required(&Some(p), "labels")?;
        replay_labels(&mut bundle, &read_label_log(&p)?)?;
    }
    let stale: Vec<&str> = bundle
        .records
        .iter()
        .zip(&fresh)
        .filter(|(r, f)| r.rule_report != **f)
        .map(|(r, _)| r.record_id.as_str())
        .collect();
    let rows = bundle.records.iter().zip(&fresh).map(|(r, f)| {
        format!(
            "{},{},{}",
            checks_row(&r.record_id, &r.segment_ref, f),
            r.rule_report == *f,
            r.human_label.map(|l| l.as_str()).unwrap_or("")
        )
    });
    let mut out = ctx.out()?;
    out.write_lines(
        "audit_check.csv",
        Some("record_id,segment_id,overall,failed_checks,matches_bundle,human_label"),
        rows,
    )?;
    out.write_json(
        "audit_check.json",
        &CheckSummary {
            bundle_id: &bundle.bundle_id,
            records: bundle.records.len(),
            stale_reports: stale.clone(),
            summary: &bundle.summary,
        },
    )?;
    ctx.finish(out, name)?;
    if !stale.is_empty() {
        return Err(CliError::data(format!(
            "{} record(s) disagree with a fresh rule check: {}",
            stale.len(),
            stale.join(", ")
        )));
    }
    Ok(())
}
