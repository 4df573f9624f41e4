//! Command-line surface. Flags override single keys of the loaded [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use peakrep_core::detectors::Algorithm;
use peakrep_core::evaluation::TolerancePolicy;
use peakrep_core::peak_representation::PolarityFilter;
use peakrep_core::{Modality, TsScale};

use crate::config::{CsvInput, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "peakrep", version, about = "Peak representations, baselines, rewards and audits for cardiac signals")]
pub struct Cli {
    /// TOML config, or a previous run's `*.manifest.json`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate seeded synthetic segments with ground truth.
    Synth(SynthArgs),
    /// Band-pass and z-score raw segments.
    Preprocess(SegmentArgs),
    /// Extract extrema and serialize them as timestamp text.
    Represent(RepresentArgs),
    /// Spline-reconstruct segments from their representation.
    Reconstruct(RepresentArgs),
    /// Reconstruction fidelity across minimum peak distances.
    SweepDistance(SweepArgs),
    /// Run classical detectors and score them.
    Detect(DetectArgs),
    /// Score external predictions against ground truth.
    Score(ScoreArgs),
    /// Welch's t-test per metric between two score files.
    Stats(StatsArgs),
    /// Detector robustness under additive Gaussian noise.
    NoiseSweep(NoiseArgs),
    /// Subject-level cross-validation folds.
    CvSplit(CvArgs),
    /// Score a batch of model answers.
    Reward(RewardArgs),
    /// Rule-check model answers and write a review bundle.
    AuditBuild(AuditBuildArgs),
    /// Re-verify a bundle against its segments and apply the label log.
    AuditCheck(AuditCheckArgs),
    /// Serve a bundle for human review.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Represent(_) => "represent",
            Command::Reconstruct(_) => "reconstruct",
            Command::SweepDistance(_) => "sweep-distance",
            Command::Detect(_) => "detect",
            Command::Score(_) => "score",
            Command::Stats(_) => "stats",
            Command::NoiseSweep(_) => "noise-sweep",
            Command::CvSplit(_) => "cv-split",
            Command::Reward(_) => "reward",
            Command::AuditBuild(_) => "audit-build",
            Command::AuditCheck(_) => "audit-check",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub modality: Option<Modality>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub duration_samples: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Segment records (JSON lines), or a CSV with `--csv-fs`.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Read `--segments` as a single-segment CSV sampled at this rate.
    #[arg(long, requires = "csv_modality")]
    pub csv_fs: Option<f64>,
    #[arg(long, requires = "csv_fs")]
    pub csv_modality: Option<Modality>,
    #[arg(long, requires = "csv_fs")]
    pub csv_subject: Option<String>,
}

#[derive(Debug, Args)]
pub struct RepresentArgs {
    #[command(flatten)]
    pub segments: SegmentArgs,
    #[arg(long)]
    pub min_distance: Option<usize>,
    /// Calendar seconds per sample, as `num/den` or an integer.
    #[arg(long)]
    pub ts_scale: Option<TsScale>,
    #[arg(long, value_parser = parse_polarity)]
    pub polarity: Option<PolarityFilter>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub segments: SegmentArgs,
    /// Comma-separated ascending distances.
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<usize>>,
    #[arg(long)]
    pub recall_tol_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub segments: SegmentArgs,
    /// `all` or a comma-separated list of detectors; the config's `detectors` when absent.
    #[arg(long, value_delimiter = ',')]
    pub algo: Option<Vec<String>>,
    /// `fixed:<ms>`, `relative:<pct>` or a bare millisecond value.
    #[arg(long)]
    pub tolerance: Option<TolerancePolicy>,
    /// Fold assignment from `cv-split`; adds per-fold aggregates.
    #[arg(long)]
    pub folds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub segments: SegmentArgs,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub tolerance: Option<TolerancePolicy>,
    #[arg(long)]
    pub folds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub segments: SegmentArgs,
    #[arg(long, value_delimiter = ',')]
    pub algo: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub tolerance: Option<TolerancePolicy>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub segments: SegmentArgs,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// JSON lines of `{segment_id, raw_output, fs, gt_peaks, ...}`.
    #[arg(long)]
    pub batch: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditBuildArgs {
    #[command(flatten)]
    pub rep: RepresentArgs,
    /// JSON lines of `{segment_id, raw_output}`.
    #[arg(long)]
    pub answers: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditCheckArgs {
    #[command(flatten)]
    pub rep: RepresentArgs,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub rep: RepresentArgs,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Label log; `<out>/labels.jsonl` when unset.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

fn parse_polarity(s: &str) -> Result<PolarityFilter, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "both" => Ok(PolarityFilter::Both),
        "max_only" | "max" => Ok(PolarityFilter::MaxOnly),
        _ => Err(format!("expected `both` or `max_only`, got {s:?}")),
    }
}

/// Resolves `--algo` values; `all` expands to every detector.
pub fn parse_algorithms(values: &[String]) -> CliResult<Vec<Algorithm>> {
    let mut out: Vec<Algorithm> = Vec::new();
    for v in values {
        if v.eq_ignore_ascii_case("all") {
            out.extend(Algorithm::ALL);
            continue;
        }
        let a: Algorithm = v.parse().map_err(|e| CliError::config(format!("--algo: {e}")))?;
        out.push(a);
    }
    let mut seen = Vec::new();
    out.retain(|a| {
        let fresh = !seen.contains(a);
        seen.push(*a);
        fresh
    });
    if out.is_empty() {
        return Err(CliError::config("--algo: no detectors selected"));
    }
    Ok(out)
}

fn set<T: Clone>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

fn set_opt<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        *slot = flag.clone();
    }
}

impl SegmentArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set_opt(&mut cfg.inputs.segments, &self.segments);
        if let (Some(fs), Some(modality)) = (self.csv_fs, self.csv_modality) {
            cfg.inputs.csv = Some(CsvInput {
                fs,
                modality,
                subject_id: self.csv_subject.clone(),
            });
        }
    }
}

impl RepresentArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        self.segments.apply(cfg);
        let r = &mut cfg.representation;
        set(&mut r.min_distance, &self.min_distance);
        set(&mut r.ts_scale, &self.ts_scale);
        set(&mut r.polarity, &self.polarity);
    }
}

impl Cli {
    /// Loads the config file (or defaults) and applies every flag on top.
    pub fn resolve_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.out, &self.out);
        set_opt(&mut cfg.jobs, &self.jobs);
        set(&mut cfg.seed, &self.seed);
        match &self.command {
            Command::Synth(a) => {
                let s = &mut cfg.synth;
                set(&mut s.modality, &a.modality);
                set(&mut s.count, &a.count);
                set_opt(&mut s.subjects, &a.subjects);
                set(&mut s.fs, &a.fs);
                set(&mut s.duration_samples, &a.duration_samples);
                set(&mut s.noise_sigma, &a.noise_sigma);
            }
            Command::Preprocess(a) => a.apply(&mut cfg),
            Command::Represent(a) | Command::Reconstruct(a) => a.apply(&mut cfg),
            Command::SweepDistance(a) => {
                a.segments.apply(&mut cfg);
                set(&mut cfg.representation.distances, &a.distances);
                set_opt(&mut cfg.representation.recall_tol_samples, &a.recall_tol_samples);
            }
            Command::Detect(a) => {
                a.segments.apply(&mut cfg);
                set(&mut cfg.tolerance, &a.tolerance);
                set_opt(&mut cfg.inputs.folds, &a.folds);
            }
            Command::Score(a) => {
                a.segments.apply(&mut cfg);
                set_opt(&mut cfg.inputs.predictions, &a.predictions);
                set(&mut cfg.tolerance, &a.tolerance);
                set_opt(&mut cfg.inputs.folds, &a.folds);
            }
            Command::Stats(a) => {
                set_opt(&mut cfg.inputs.score_a, &a.a);
                set_opt(&mut cfg.inputs.score_b, &a.b);
            }
            Command::NoiseSweep(a) => {
                a.segments.apply(&mut cfg);
                set(&mut cfg.noise.sigmas, &a.sigmas);
                set(&mut cfg.tolerance, &a.tolerance);
            }
            Command::CvSplit(a) => {
                a.segments.apply(&mut cfg);
                set(&mut cfg.cv.k, &a.k);
            }
            Command::Reward(a) => set_opt(&mut cfg.inputs.reward_batch, &a.batch),
            Command::AuditBuild(a) => {
                a.rep.apply(&mut cfg);
                set_opt(&mut cfg.inputs.answers, &a.answers);
            }
            Command::AuditCheck(a) => {
                a.rep.apply(&mut cfg);
                set_opt(&mut cfg.inputs.bundle, &a.bundle);
                set_opt(&mut cfg.inputs.labels, &a.labels);
            }
            Command::Serve(a) => {
                a.rep.apply(&mut cfg);
                set_opt(&mut cfg.inputs.bundle, &a.bundle);
                set_opt(&mut cfg.inputs.labels, &a.labels);
                set(&mut cfg.serve.host, &a.host);
                set(&mut cfg.serve.port, &a.port);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
