//! Classical peak detectors used as baselines.
//!
//! Every detector takes a preprocessed [`SignalSegment`] and returns strictly
//! increasing sample indices. Ties are always resolved towards the leftmost
//! index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::{Modality, SignalSegment};

mod bishop;
mod choi;
mod elgendi;
mod nabian;
mod pan_tompkins;

pub use bishop::{bishop, BishopParams};
pub use choi::{choi, estimate_period, ChoiParams};
pub use elgendi::{elgendi, ElgendiParams};
pub use nabian::{nabian, NabianParams};
pub use pan_tompkins::{pan_tompkins, PanTompkinsParams};

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("sampling rate {0} Hz is below the supported minimum of {1} Hz")]
    UnsupportedRate(f64, f64),
    #[error("segment {0} is not preprocessed")]
    NotPreprocessed(String),
    #[error("signal too short: {len} samples, need {required}")]
    TooShort { len: usize, required: usize },
    #[error("no periodicity found in the search band")]
    NoPeriodFound,
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    PanTompkins,
    Nabian,
    Elgendi,
    Bishop,
    Choi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::PanTompkins,
        Algorithm::Nabian,
        Algorithm::Elgendi,
        Algorithm::Bishop,
        Algorithm::Choi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::PanTompkins => "pan_tompkins",
            Algorithm::Nabian => "nabian",
            Algorithm::Elgendi => "elgendi",
            Algorithm::Bishop => "bishop",
            Algorithm::Choi => "choi",
        }
    }

    /// Modality the algorithm was designed for.
    pub fn home_modality(self) -> Modality {
        match self {
            Algorithm::PanTompkins | Algorithm::Nabian => Modality::Ecg,
            Algorithm::Elgendi | Algorithm::Bishop => Modality::Ppg,
            Algorithm::Choi => Modality::Bcg,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == key)
            .ok_or_else(|| DetectorError::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub algorithm: Algorithm,
    /// Minimum spacing used when merging duplicate detections.
    pub refractory_s: f64,
    pub pan_tompkins: PanTompkinsParams,
    pub nabian: NabianParams,
    pub elgendi: ElgendiParams,
    pub bishop: BishopParams,
    pub choi: ChoiParams,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PanTompkins,
            refractory_s: 0.25,
            pan_tompkins: PanTompkinsParams::default(),
            nabian: NabianParams::default(),
            elgendi: ElgendiParams::default(),
            bishop: BishopParams::default(),
            choi: ChoiParams::default(),
        }
    }
}

impl DetectorConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let positive = [
            ("refractory_s", self.refractory_s),
            ("pan_tompkins.integration_ms", self.pan_tompkins.integration_ms),
            ("pan_tompkins.refractory_ms", self.pan_tompkins.refractory_ms),
            ("pan_tompkins.refine_ms", self.pan_tompkins.refine_ms),
            ("pan_tompkins.searchback_factor", self.pan_tompkins.searchback_factor),
            ("nabian.window_s", self.nabian.window_s),
            ("elgendi.w1_ms", self.elgendi.w1_ms),
            ("elgendi.w2_ms", self.elgendi.w2_ms),
            ("choi.min_lag_s", self.choi.min_lag_s),
            ("choi.max_lag_s", self.choi.max_lag_s),
            ("choi.merge_fraction", self.choi.merge_fraction),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(DetectorError::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
        if !(self.elgendi.beta >= 0.0) {
            return Err(DetectorError::InvalidConfig("elgendi.beta must be non-negative".into()));
        }
        if self.choi.min_lag_s >= self.choi.max_lag_s {
            return Err(DetectorError::InvalidConfig("choi.min_lag_s must be below max_lag_s".into()));
        }
        if self.bishop.max_scale == Some(0) {
            return Err(DetectorError::InvalidConfig("bishop.max_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Runs the configured algorithm.
pub fn detect(seg: &SignalSegment, cfg: &DetectorConfig) -> Result<Vec<usize>, DetectorError> {
    cfg.validate()?;
    if !seg.preprocessed {
        return Err(DetectorError::NotPreprocessed(seg.segment_id.clone()));
    }
    match cfg.algorithm {
        Algorithm::PanTompkins => pan_tompkins(seg, cfg),
        Algorithm::Nabian => nabian(seg, cfg),
        Algorithm::Elgendi => elgendi(seg, cfg),
        Algorithm::Bishop => bishop(seg, cfg),
        Algorithm::Choi => choi(seg, cfg),
    }
}

pub(crate) fn samples_of(duration_s: f64, fs: f64) -> usize {
    ((duration_s * fs).round() as usize).max(1)
}

/// Leftmost index of the maximum of `x[range]`, as an absolute index.
pub(crate) fn argmax(x: &[f64], lo: usize, hi: usize) -> usize {
    (lo..hi).fold(lo, |best, i| if x[i] > x[best] { i } else { best })
}

pub(crate) fn is_strict_local_max(x: &[f64], i: usize) -> bool {
    i >= 1 && i + 1 < x.len() && x[i] > x[i - 1] && x[i] > x[i + 1]
}

/// Mean over a window of `w` samples centred on each index, shrunk at the edges.
pub(crate) fn centered_moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + v);
    }
    let before = (w.max(1) - 1) / 2;
    let after = w.max(1) / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Collapses detections closer than `min_gap` samples, keeping the larger
/// amplitude (the earlier one on ties).
pub(crate) fn merge_refractory(x: &[f64], peaks: &[usize], min_gap: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(peaks.len());
    for &p in peaks {
        match out.last_mut() {
            Some(last) if p - *last < min_gap => {
                if x[p] > x[*last] {
                    *last = p;
                }
            }
            _ => out.push(p),
        }
    }
    out
}
