//! Signal segments, their on-disk formats, and ground-truthed synthesis.
//!
//! Two formats are supported:
//!
//! * **Records**: one JSON object per line with the keys `segment_id`,
//!   `subject_id`, `modality`, `fs`, `samples`, `gt_peaks`, `preprocessed`.
//!   Reals are written in shortest round-trip form, so
//!   `write_segments(load_segments(f))` reproduces a canonical file byte for byte.
//! * **CSV**: header `index,value`, one segment per file. Ground truth comes
//!   from an optional sidecar `<name>.peaks.csv` with header `index`.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Ecg,
    Ppg,
    Bcg,
    Bsg,
    Synth,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Ecg,
        Modality::Ppg,
        Modality::Bcg,
        Modality::Bsg,
        Modality::Synth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ecg => "ECG",
            Modality::Ppg => "PPG",
            Modality::Bcg => "BCG",
            Modality::Bsg => "BSG",
            Modality::Synth => "SYNTH",
        }
    }

    /// Conventional label of the target fiducial (`R`, `S` for systolic, `J`).
    pub fn peak_label(self) -> &'static str {
        match self {
            Modality::Ecg => "R",
            Modality::Ppg => "S",
            Modality::Bcg | Modality::Bsg => "J",
            Modality::Synth => "P",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

/// One fixed-length window of a recording with its ground-truth peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSegment {
    pub segment_id: String,
    pub subject_id: String,
    pub modality: Modality,
    pub fs: f64,
    pub samples: Vec<f64>,
    pub gt_peaks: Vec<usize>,
    pub preprocessed: bool,
}

impl SignalSegment {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(format!("fs must be positive, got {}", self.fs));
        }
        if self.samples.is_empty() {
            return Err("samples must not be empty".into());
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(format!("sample {i} is not finite"));
        }
        if let Some(w) = self.gt_peaks.windows(2).find(|w| w[0] >= w[1]) {
            return Err(format!(
                "gt_peaks not strictly increasing ({} then {})",
                w[0], w[1]
            ));
        }
        if let Some(&last) = self.gt_peaks.last() {
            if last >= self.samples.len() {
                return Err(format!(
                    "gt peak {last} outside [0, {})",
                    self.samples.len()
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("segment {segment_id}: {reason}")]
    InvariantViolation { segment_id: String, reason: String },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How to read a segment file.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentFormat {
    Records,
    /// A single-segment CSV; the file itself carries no metadata.
    Csv {
        fs: f64,
        modality: Modality,
        subject_id: Option<String>,
    },
}

pub fn load_segments(path: &Path, format: &SegmentFormat) -> Result<Vec<SignalSegment>, SignalIoError> {
    if !path.exists() {
        return Err(SignalIoError::FileNotFound(path.to_path_buf()));
    }
    match format {
        SegmentFormat::Records => load_records(path),
        SegmentFormat::Csv {
            fs,
            modality,
            subject_id,
        } => load_csv(path, *fs, *modality, subject_id.as_deref()).map(|s| vec![s]),
    }
}

fn load_records(path: &Path) -> Result<Vec<SignalSegment>, SignalIoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seg: SignalSegment =
            serde_json::from_str(&line).map_err(|e| SignalIoError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        seg.validate()
            .map_err(|reason| SignalIoError::InvariantViolation {
                segment_id: seg.segment_id.clone(),
                reason,
            })?;
        out.push(seg);
    }
    Ok(out)
}

/// Sidecar ground-truth path for a CSV segment: `rec.csv` -> `rec.peaks.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.peaks.csv"))
}

fn read_csv_columns(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, SignalIoError> {
    let text = fs::read_to_string(path)?;
    let fmt_err = |line: usize, reason: String| SignalIoError::Format {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| fmt_err(1, "empty file".into()))?;
    let got: Vec<&str> = head.split(',').map(str::trim).collect();
    if got != header {
        return Err(fmt_err(1, format!("expected header {:?}, got {:?}", header.join(","), head)));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cols.len() != header.len() {
            return Err(fmt_err(
                i + 1,
                format!("expected {} columns, found {}", header.len(), cols.len()),
            ));
        }
        rows.push(cols);
    }
    Ok(rows)
}

fn load_csv(
    path: &Path,
    fs: f64,
    modality: Modality,
    subject_id: Option<&str>,
) -> Result<SignalSegment, SignalIoError> {
    let segment_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "segment".into());
    let rows = read_csv_columns(path, &["index", "value"])?;
    let mut samples = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let line = k + 2;
        let err = |reason: String| SignalIoError::Format {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let index: usize = row[0]
            .parse()
            .map_err(|_| err(format!("bad index {:?}", row[0])))?;
        if index != k {
            return Err(err(format!("expected index {k}, found {index}")));
        }
        let value: f64 = row[1]
            .parse()
            .map_err(|_| err(format!("bad value {:?}", row[1])))?;
        samples.push(value);
    }

    let sidecar = sidecar_path(path);
    let mut gt_peaks = Vec::new();
    if sidecar.exists() {
        for (k, row) in read_csv_columns(&sidecar, &["index"])?.iter().enumerate() {
            let idx = row[0].parse().map_err(|_| SignalIoError::Format {
                path: sidecar.clone(),
                line: k + 2,
                reason: format!("bad index {:?}", row[0]),
            })?;
            gt_peaks.push(idx);
        }
    }

    let seg = SignalSegment {
        subject_id: subject_id.map(str::to_owned).unwrap_or_else(|| segment_id.clone()),
        segment_id,
        modality,
        fs,
        samples,
        gt_peaks,
        preprocessed: false,
    };
    seg.validate()
        .map_err(|reason| SignalIoError::InvariantViolation {
            segment_id: seg.segment_id.clone(),
            reason,
        })?;
    Ok(seg)
}

/// Canonical single-line encoding of a segment (one records-file line, no newline).
pub fn encode_record(seg: &SignalSegment) -> String {
    serde_json::to_string(seg).expect("segment serialization is infallible")
}

pub fn write_records<W: Write>(mut w: W, segments: &[SignalSegment]) -> io::Result<()> {
    for seg in segments {
        writeln!(w, "{}", encode_record(seg))?;
    }
    w.flush()
}

pub fn write_segments(path: &Path, segments: &[SignalSegment]) -> Result<(), SignalIoError> {
    let file = io::BufWriter::new(fs::File::create(path)?);
    write_records(file, segments)?;
    Ok(())
}

/// Writes `seg` as `<path>` plus its `.peaks.csv` sidecar.
pub fn write_csv(path: &Path, seg: &SignalSegment) -> Result<(), SignalIoError> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "index,value")?;
    for (i, v) in seg.samples.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    w.flush()?;
    let mut p = io::BufWriter::new(fs::File::create(sidecar_path(path))?);
    writeln!(p, "index")?;
    for i in &seg.gt_peaks {
        writeln!(p, "{i}")?;
    }
    p.flush()?;
    Ok(())
}

/// One Gaussian wave of a beat template, positioned relative to the fiducial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub offset_s: f64,
    pub amplitude: f64,
    pub width_s: f64,
}

impl Wave {
    pub const fn new(offset_s: f64, amplitude: f64, width_s: f64) -> Self {
        Self {
            offset_s,
            amplitude,
            width_s,
        }
    }
}

/// Default beat template for a modality.
///
/// ECG: P, Q, tall narrow R, S, wide T. PPG: systolic wave plus a later,
/// wider diastolic wave. BCG/BSG: H, negative I, tall J, negative K, L.
pub fn default_morphology(modality: Modality) -> Vec<Wave> {
    match modality {
        Modality::Ecg => vec![
            Wave::new(-0.20, 0.15, 0.025),
            Wave::new(-0.03, -0.15, 0.010),
            Wave::new(0.0, 1.0, 0.012),
            Wave::new(0.03, -0.25, 0.010),
            Wave::new(0.25, 0.30, 0.040),
        ],
        Modality::Ppg => vec![Wave::new(0.0, 1.0, 0.07), Wave::new(0.25, 0.45, 0.12)],
        Modality::Bcg | Modality::Bsg => vec![
            Wave::new(-0.15, 0.20, 0.020),
            Wave::new(-0.07, -0.50, 0.025),
            Wave::new(0.0, 1.0, 0.030),
            Wave::new(0.08, -0.60, 0.030),
            Wave::new(0.16, 0.25, 0.035),
        ],
        Modality::Synth => vec![Wave::new(0.0, 1.0, 0.05)],
    }
}

/// Parameters of a synthetic segment. Synthesis is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub modality: Modality,
    pub fs: f64,
    pub duration_samples: usize,
    pub mean_ibi_s: f64,
    /// Half-width of the uniform IBI jitter, as a fraction of `mean_ibi_s`.
    pub ibi_jitter_frac: f64,
    /// Per-beat uniform amplitude jitter, as a fraction of the template amplitude.
    pub amplitude_jitter_frac: f64,
    pub noise_sigma: f64,
    /// Overrides the modality's default beat template.
    pub morphology: Option<Vec<Wave>>,
    pub rng_seed: u64,
    pub segment_id: Option<String>,
    pub subject_id: Option<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            modality: Modality::Ecg,
            fs: 100.0,
            duration_samples: 1000,
            mean_ibi_s: 1.0,
            ibi_jitter_frac: 0.0,
            amplitude_jitter_frac: 0.0,
            noise_sigma: 0.0,
            morphology: None,
            rng_seed: 0,
            segment_id: None,
            subject_id: None,
        }
    }
}

impl SynthSpec {
    pub fn new(modality: Modality, fs: f64, duration_samples: usize, rng_seed: u64) -> Self {
        Self {
            modality,
            fs,
            duration_samples,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err("fs must be positive".into());
        }
        if self.duration_samples == 0 {
            return Err("duration_samples must be positive".into());
        }
        if !(self.mean_ibi_s.is_finite() && self.mean_ibi_s * self.fs >= 20.0) {
            return Err(format!(
                "mean_ibi_s*fs = {} samples, need at least 20",
                self.mean_ibi_s * self.fs
            ));
        }
        if !(0.0..0.5).contains(&self.ibi_jitter_frac) {
            return Err("ibi_jitter_frac must lie in [0, 0.5)".into());
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter_frac) {
            return Err("amplitude_jitter_frac must lie in [0, 1)".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err("noise_sigma must be non-negative".into());
        }
        if let Some(m) = &self.morphology {
            if m.is_empty() || m.iter().any(|w| !(w.width_s > 0.0)) {
                return Err("morphology needs at least one wave with positive width".into());
            }
        }
        Ok(())
    }
}

/// Renders a seeded synthetic segment with known fiducial positions.
///
/// Beats are placed at a random phase followed by jittered intervals. Each
/// ground-truth peak is the strict local maximum reached by hill-climbing the
/// noise-free waveform from the nominal fiducial; beats whose apex falls on
/// the window edge are left unlabeled.
pub fn synthesize_segment(spec: &SynthSpec) -> Result<SignalSegment, SignalIoError> {
    spec.validate().map_err(SignalIoError::InvalidSpec)?;
    let mut rng = rng::seeded(spec.rng_seed);
    let n = spec.duration_samples;
    let fs = spec.fs;
    let waves = spec
        .morphology
        .clone()
        .unwrap_or_else(|| default_morphology(spec.modality));
    let extent_s = waves
        .iter()
        .map(|w| w.offset_s.abs() + 6.0 * w.width_s)
        .fold(0.0, f64::max);

    let mean_ibi = spec.mean_ibi_s * fs;
    // Fiducial positions in samples; start one beat early so tails enter the window.
    let mut pos = rng.random::<f64>() * mean_ibi - mean_ibi;
    let mut beats = Vec::new();
    let horizon = n as f64 + extent_s * fs;
    while pos < horizon {
        let amp = 1.0 + spec.amplitude_jitter_frac * (2.0 * rng.random::<f64>() - 1.0);
        beats.push((pos, amp));
        let u = spec.ibi_jitter_frac * (2.0 * rng.random::<f64>() - 1.0);
        pos += mean_ibi * (1.0 + u);
    }

    let mut samples = vec![0.0; n];
    for &(center, amp) in &beats {
        for w in &waves {
            let mu = center + w.offset_s * fs;
            let sigma = w.width_s * fs;
            let lo = (mu - 6.0 * sigma).floor().max(0.0) as usize;
            let hi = ((mu + 6.0 * sigma).ceil().max(0.0) as usize).min(n.saturating_sub(1));
            for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let z = (i as f64 - mu) / sigma;
                *s += amp * w.amplitude * (-0.5 * z * z).exp();
            }
        }
    }

    let reach = ((0.05 * fs).round() as usize).max(1);
    let mut gt_peaks = Vec::new();
    for &(center, _) in &beats {
        let c = center.round();
        if c < 1.0 || c > (n as f64) - 2.0 {
            continue;
        }
        let start = c as usize;
        let apex = hill_climb(&samples, start);
        let strict = apex >= 1 && apex + 1 < n && samples[apex] > samples[apex - 1] && samples[apex] > samples[apex + 1];
        if strict && apex.abs_diff(start) <= reach && gt_peaks.last().is_none_or(|&p| p < apex) {
            gt_peaks.push(apex);
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| SignalIoError::InvalidSpec(e.to_string()))?;
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
    }

    Ok(SignalSegment {
        segment_id: spec
            .segment_id
            .clone()
            .unwrap_or_else(|| format!("synth-{}-{}", spec.modality.as_str().to_lowercase(), spec.rng_seed)),
        subject_id: spec
            .subject_id
            .clone()
            .unwrap_or_else(|| format!("subject-{}", spec.rng_seed)),
        modality: spec.modality,
        fs,
        samples,
        gt_peaks,
        preprocessed: false,
    })
}

fn hill_climb(x: &[f64], mut i: usize) -> usize {
    loop {
        let left = if i > 0 { Some(x[i - 1]) } else { None };
        let right = x.get(i + 1).copied();
        match (left, right) {
            (Some(l), Some(r)) if l > x[i] && l >= r => i -= 1,
            (_, Some(r)) if r > x[i] => i += 1,
            (Some(l), None) if l > x[i] => i -= 1,
            _ => return i,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_free(seed: u64) -> SynthSpec {
        SynthSpec::new(Modality::Ecg, 100.0, 1000, seed)
    }

    #[test]
    fn periodic_ecg_has_evenly_spaced_peaks() {
        for seed in 0..20 {
            let seg = synthesize_segment(&noise_free(seed)).unwrap();
            assert!(matches!(seg.gt_peaks.len(), 9 | 10), "seed {seed}: {:?}", seg.gt_peaks);
            assert!(seg.gt_peaks.windows(2).all(|w| w[1] - w[0] == 100));
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = SynthSpec {
            ibi_jitter_frac: 0.1,
            noise_sigma: 0.2,
            ..noise_free(42)
        };
        let a = synthesize_segment(&spec).unwrap();
        let b = synthesize_segment(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a
            .samples
            .iter()
            .zip(&b.samples)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn noise_has_requested_spread() {
        let clean = SynthSpec {
            duration_samples: 100_000,
            ..noise_free(3)
        };
        let noisy = SynthSpec {
            noise_sigma: 0.3,
            ..clean.clone()
        };
        let a = synthesize_segment(&clean).unwrap();
        let b = synthesize_segment(&noisy).unwrap();
        let d: Vec<f64> = a.samples.iter().zip(&b.samples).map(|(x, y)| y - x).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd - 0.3).abs() < 0.03, "sd {sd}");
    }

    #[test]
    fn gt_peaks_are_strict_maxima_without_noise() {
        for modality in Modality::ALL {
            for seed in 0..10 {
                let spec = SynthSpec {
                    modality,
                    ibi_jitter_frac: 0.2,
                    mean_ibi_s: 0.8,
                    amplitude_jitter_frac: 0.2,
                    ..noise_free(seed)
                };
                let seg = synthesize_segment(&spec).unwrap();
                assert!(!seg.gt_peaks.is_empty());
                for &i in &seg.gt_peaks {
                    let x = &seg.samples;
                    assert!(x[i - 1] < x[i] && x[i] > x[i + 1], "{modality} seed {seed} idx {i}");
                }
                seg.validate().unwrap();
            }
        }
    }

    #[test]
    fn rejects_unresolvable_beats() {
        let spec = SynthSpec {
            mean_ibi_s: 0.1,
            ..noise_free(0)
        };
        assert!(matches!(
            synthesize_segment(&spec),
            Err(SignalIoError::InvalidSpec(_))
        ));
        let spec = SynthSpec {
            ibi_jitter_frac: 0.5,
            ..noise_free(0)
        };
        assert!(synthesize_segment(&spec).is_err());
    }

    #[test]
    fn validate_flags_repeated_peaks() {
        let mut seg = synthesize_segment(&noise_free(1)).unwrap();
        seg.gt_peaks = vec![5, 5];
        assert!(seg.validate().unwrap_err().contains("not strictly increasing"));
    }

    #[test]
    fn modality_parses_case_insensitively() {
        assert_eq!("ppg".parse::<Modality>().unwrap(), Modality::Ppg);
        assert!("EEG".parse::<Modality>().is_err());
    }
}
