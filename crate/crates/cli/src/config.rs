//! Declarative run configuration. Every knob of every subcommand lives here;
//! command-line flags only override individual keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use peakrep_core::audit::CheckTolerances;
use peakrep_core::detectors::{Algorithm, DetectorConfig};
use peakrep_core::evaluation::{HrvStatistic, TolerancePolicy, DEFAULT_NOISE_SIGMAS};
use peakrep_core::peak_representation::PolarityFilter;
use peakrep_core::preprocess::FilterSpec;
use peakrep_core::reconstruction::{recall_tol_samples, DEFAULT_RECALL_TOL_MS};
use peakrep_core::reward::RewardSettings;
use peakrep_core::{Modality, SynthSpec, TsScale};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for per-segment work; all cores when absent.
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub inputs: Inputs,
    pub synth: SynthSection,
    pub filter: FilterSection,
    pub representation: RepresentationSection,
    pub detectors: Vec<DetectorConfig>,
    pub tolerance: TolerancePolicy,
    pub hrv_statistic: HrvStatistic,
    pub reward: RewardSettings,
    pub noise: NoiseSection,
    pub cv: CvSection,
    pub audit: CheckTolerances,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            out: PathBuf::from("out"),
            inputs: Inputs::default(),
            synth: SynthSection::default(),
            filter: FilterSection::default(),
            representation: RepresentationSection::default(),
            detectors: Algorithm::ALL.into_iter().map(DetectorConfig::for_algorithm).collect(),
            tolerance: TolerancePolicy::default(),
            hrv_statistic: HrvStatistic::default(),
            reward: RewardSettings::default(),
            noise: NoiseSection::default(),
            cv: CvSection::default(),
            audit: CheckTolerances::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Records file, or a single-segment CSV when `csv` is set.
    pub segments: Option<PathBuf>,
    pub csv: Option<CsvInput>,
    /// JSON lines `{segment_id, peaks}` (and optionally `detector`).
    pub predictions: Option<PathBuf>,
    /// JSON lines `{segment_id, raw_output}`.
    pub answers: Option<PathBuf>,
    /// JSON lines of reward records.
    pub reward_batch: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    pub score_a: Option<PathBuf>,
    pub score_b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvInput {
    pub fs: f64,
    pub modality: Modality,
    pub subject_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub modality: Modality,
    pub count: usize,
    /// Distinct subject ids, assigned round-robin; defaults to `count`.
    pub subjects: Option<usize>,
    pub fs: f64,
    pub duration_samples: usize,
    pub mean_ibi_s: f64,
    pub ibi_jitter_frac: f64,
    pub amplitude_jitter_frac: f64,
    pub noise_sigma: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthSpec::default();
        Self {
            modality: d.modality,
            count: 10,
            subjects: None,
            fs: d.fs,
            duration_samples: d.duration_samples,
            mean_ibi_s: 0.85,
            ibi_jitter_frac: 0.03,
            amplitude_jitter_frac: 0.05,
            noise_sigma: d.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub zero_phase: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterSpec::new(100.0);
        Self {
            order: d.order,
            low_hz: d.low_hz,
            high_hz: d.high_hz,
            zero_phase: d.zero_phase,
        }
    }
}

impl FilterSection {
    pub fn spec(&self, fs: f64) -> FilterSpec {
        FilterSpec {
            order: self.order,
            low_hz: self.low_hz,
            high_hz: self.high_hz,
            fs,
            zero_phase: self.zero_phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationSection {
    pub min_distance: usize,
    pub ts_scale: TsScale,
    pub polarity: PolarityFilter,
    /// Distances for `sweep-distance`, ascending.
    pub distances: Vec<usize>,
    /// Recall radius in samples; 30 ms at the segment's rate when absent.
    pub recall_tol_samples: Option<usize>,
}

impl Default for RepresentationSection {
    fn default() -> Self {
        Self {
            min_distance: 0,
            ts_scale: TsScale::ONE,
            polarity: PolarityFilter::Both,
            distances: vec![0, 2, 5, 10],
            recall_tol_samples: None,
        }
    }
}

impl RepresentationSection {
    pub fn recall_tol(&self, fs: f64) -> usize {
        self.recall_tol_samples
            .unwrap_or_else(|| recall_tol_samples(fs, DEFAULT_RECALL_TOL_MS))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigmas: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigmas: DEFAULT_NOISE_SIGMAS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { k: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8787,
        }
    }
}

/// Manifest shape accepted by `--config`, so a run can be repeated from its manifest.
#[derive(Deserialize)]
struct ManifestConfig {
    config: RunConfig,
}

impl RunConfig {
    /// Reads a TOML config, or the `config` object of a JSON run manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str::<ManifestConfig>(&text)
                .map(|m| m.config)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::internal(format!("serializing config: {e}")))
    }

    /// Numeric invariants that do not depend on the subcommand.
    pub fn validate(&self) -> CliResult<()> {
        if self.jobs == Some(0) {
            return Err(CliError::config("jobs must be at least 1"));
        }
        self.filter.spec(1000.0).validate().map_err(|e| CliError::config(format!("filter: {e}")))?;
        for d in &self.detectors {
            d.validate().map_err(|e| CliError::config(format!("detector {}: {e}", d.algorithm.as_str())))?;
        }
        self.tolerance.validate().map_err(|e| CliError::config(format!("tolerance: {e}")))?;
        self.reward
            .weights
            .validate()
            .map_err(|e| CliError::config(format!("reward weights: {e}")))?;
        if !(self.reward.tol_ms.is_finite() && self.reward.tol_ms > 0.0) {
            return Err(CliError::config("reward.tol_ms must be positive"));
        }
        if self.noise.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CliError::config("noise sigmas must be non-negative"));
        }
        if self.representation.distances.windows(2).any(|w| w[0] > w[1]) {
            return Err(CliError::config("representation.distances must be ascending"));
        }
        if self.cv.k < 2 {
            return Err(CliError::config("cv.k must be at least 2"));
        }
        if !(self.audit.amp_tol.is_finite() && self.audit.amp_tol >= 0.0) {
            return Err(CliError::config("audit.amp_tol must be non-negative"));
        }
        if self.synth.count == 0 || self.synth.subjects == Some(0) {
            return Err(CliError::config("synth.count and synth.subjects must be positive"));
        }
        Ok(())
    }

    pub fn detectors_for(&self, algorithms: &[Algorithm]) -> Vec<DetectorConfig> {
        algorithms
            .iter()
            .map(|&a| {
                self.detectors
                    .iter()
                    .find(|d| d.algorithm == a)
                    .cloned()
                    .unwrap_or_else(|| DetectorConfig::for_algorithm(a))
            })
            .collect()
    }
}

/// Resolves a required input, failing with a config error when unset or missing.
pub fn require(path: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
    let p = path
        .as_ref()
        .ok_or_else(|| CliError::config(format!("inputs.{key} is required (flag or config)")))?;
    if !p.exists() {
        return Err(CliError::config(format!("inputs.{key}: {} does not exist", p.display())));
    }
    Ok(p.clone())
}
