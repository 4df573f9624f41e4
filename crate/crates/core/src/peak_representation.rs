//! Compact symbolic form of a segment: timestamped local extrema.
//!
//! A segment is reduced to its strict local extrema, each tagged with a
//! synthetic calendar timestamp counted from `2020-01-01 00:00:00`, and
//! serialized as
//!
//! ```text
//! <TS_START>
//! (2020-01-01 00:00:17, 2.915030)
//! (2020-01-01 00:00:21, -1.943758)
//! <TS_END>
//! ```
//!
//! Timestamps restart at the anchor for every segment. The elapsed seconds of
//! sample `i` are `floor(i * ts_scale)`; the default scale of one second per
//! sample keeps every index distinct.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::SignalSegment;

pub const TS_START: &str = "<TS_START>";
pub const TS_END: &str = "<TS_END>";

const ANCHOR_YEAR: i32 = 2020;
/// Encodable range: elapsed seconds must stay below 365 days.
pub const MAX_ELAPSED_S: u64 = 86_400 * 365;
const TS_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error, PartialEq)]
pub enum RepError {
    #[error("segment {0} is not preprocessed")]
    NotPreprocessed(String),
    #[error("index {index} at scale {scale} exceeds the encodable range")]
    OutOfRange { index: usize, scale: TsScale },
    #[error("cannot parse timestamp {ts:?}: {reason}")]
    TimestampParse { ts: String, reason: String },
    #[error("timestamp {0:?} is not anchored in 2020")]
    WrongAnchor(String),
    #[error("missing {0} sentinel")]
    MissingSentinel(&'static str),
    #[error("line {line}: malformed pair {text:?}")]
    MalformedPair { line: usize, text: String },
    #[error("line {line}: timestamps not strictly increasing")]
    NonMonotonicTimestamps { line: usize },
    #[error("indices {first} and {second} share a timestamp at scale {scale}")]
    TimestampCollision {
        first: usize,
        second: usize,
        scale: TsScale,
    },
    #[error("representation of {rep} does not belong to segment {segment}")]
    SegmentMismatch { rep: String, segment: String },
    #[error("invalid timestamp scale: {0}")]
    InvalidScale(String),
}

/// Calendar seconds per sample index, as a positive rational `num/den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ScaleRepr", into = "String")]
pub struct TsScale {
    num: u64,
    den: u64,
}

impl TsScale {
    pub const ONE: TsScale = TsScale { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, RepError> {
        if num == 0 || den == 0 {
            return Err(RepError::InvalidScale(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// `1/fs`: elapsed calendar seconds equal real seconds. Requires integral `fs`.
    pub fn real_time(fs: f64) -> Result<Self, RepError> {
        if fs.fract() != 0.0 || fs < 1.0 || fs > u32::MAX as f64 {
            return Err(RepError::InvalidScale(format!("1/{fs}")));
        }
        Self::new(1, fs as u64)
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn seconds_per_sample(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for TsScale {
    fn default() -> Self {
        Self::ONE
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for TsScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for TsScale {
    type Err = RepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RepError::InvalidScale(s.to_string());
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let num = n.trim().parse().map_err(|_| bad())?;
        let den = d.trim().parse().map_err(|_| bad())?;
        Self::new(num, den)
    }
}

/// Serialized scale: a whole number of seconds or a `"num/den"` string.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScaleRepr {
    Whole(u64),
    Text(String),
}

impl TryFrom<ScaleRepr> for TsScale {
    type Error = RepError;

    fn try_from(r: ScaleRepr) -> Result<Self, Self::Error> {
        match r {
            ScaleRepr::Whole(n) => Self::new(n, 1),
            ScaleRepr::Text(s) => s.parse(),
        }
    }
}

impl From<TsScale> for String {
    fn from(s: TsScale) -> String {
        s.to_string()
    }
}

/// Seconds elapsed since the anchor, rendered as `YYYY-MM-DD HH:MM:SS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Timestamp(u64);

fn anchor() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(ANCHOR_YEAR, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("anchor date is valid")
}

impl Timestamp {
    pub const ANCHOR: Timestamp = Timestamp(0);

    pub fn from_elapsed(seconds: u64) -> Result<Self, RepError> {
        if seconds >= MAX_ELAPSED_S {
            return Err(RepError::OutOfRange {
                index: seconds as usize,
                scale: TsScale::ONE,
            });
        }
        Ok(Self(seconds))
    }

    pub fn elapsed_seconds(&self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = anchor() + TimeDelta::seconds(self.0 as i64);
        write!(f, "{}", t.format(TS_FORMAT))
    }
}

impl FromStr for Timestamp {
    type Err = RepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| RepError::TimestampParse {
            ts: s.to_string(),
            reason: reason.to_string(),
        };
        let t = NaiveDateTime::parse_from_str(s, TS_FORMAT).map_err(|e| err(&e.to_string()))?;
        // chrono accepts unpadded fields; the grammar does not.
        if t.format(TS_FORMAT).to_string() != s {
            return Err(err("expected zero-padded YYYY-MM-DD HH:MM:SS"));
        }
        if t.year() != ANCHOR_YEAR {
            return Err(RepError::WrongAnchor(s.to_string()));
        }
        Ok(Self((t - anchor()).num_seconds() as u64))
    }
}

impl TryFrom<String> for Timestamp {
    type Error = RepError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Timestamp> for String {
    fn from(t: Timestamp) -> String {
        t.to_string()
    }
}

pub fn index_to_timestamp(index: usize, scale: TsScale) -> Result<Timestamp, RepError> {
    let elapsed = index as u128 * scale.num as u128 / scale.den as u128;
    if elapsed >= MAX_ELAPSED_S as u128 {
        return Err(RepError::OutOfRange { index, scale });
    }
    Ok(Timestamp(elapsed as u64))
}

/// Smallest index whose timestamp equals `ts`; exact inverse when `index * scale` is integral.
pub fn timestamp_to_index(ts: Timestamp, scale: TsScale) -> usize {
    let num = scale.num as u128;
    ((ts.0 as u128 * scale.den as u128).div_ceil(num)) as usize
}

pub fn parse_timestamp_index(text: &str, scale: TsScale) -> Result<usize, RepError> {
    Ok(timestamp_to_index(text.parse()?, scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarity {
    Max,
    Min,
}

/// Which extrema to collect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityFilter {
    #[default]
    Both,
    MaxOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePeak {
    pub index: usize,
    pub amplitude: f64,
    pub polarity: Polarity,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRepresentation {
    pub segment_ref: String,
    pub fs: f64,
    pub ts_scale: TsScale,
    pub min_distance: usize,
    pub entries: Vec<CandidatePeak>,
}

/// Context that the text form does not carry, needed to rebuild a representation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMeta {
    pub segment_ref: String,
    pub fs: f64,
    pub ts_scale: TsScale,
    pub min_distance: usize,
    pub polarity: PolarityFilter,
}

impl RepMeta {
    pub fn of(rep: &PeakRepresentation, polarity: PolarityFilter) -> Self {
        Self {
            segment_ref: rep.segment_ref.clone(),
            fs: rep.fs,
            ts_scale: rep.ts_scale,
            min_distance: rep.min_distance,
            polarity,
        }
    }
}

/// Raw extremum before timestamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub index: usize,
    pub amplitude: f64,
    pub polarity: Polarity,
}

/// Strict local extrema of `x`; plateaus report their leftmost sample, endpoints never qualify.
pub fn local_extrema(x: &[f64]) -> Vec<Extremum> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 >= n {
            break;
        }
        let (before, after) = (x[i - 1], x[j + 1]);
        if before < x[i] && after < x[i] {
            out.push(Extremum {
                index: i,
                amplitude: x[i],
                polarity: Polarity::Max,
            });
        } else if before > x[i] && after > x[i] {
            out.push(Extremum {
                index: i,
                amplitude: x[i],
                polarity: Polarity::Min,
            });
        }
        i = j + 1;
    }
    out
}

/// Keeps an extremum only if no stronger same-polarity extremum lies closer than
/// `min_distance` samples. Strength is `|amplitude|`, ties favour the left index.
///
/// Because survival depends only on the unpruned neighbourhood, the survivors
/// at a larger distance are always a subset of those at a smaller one.
pub fn prune_by_distance(extrema: &[Extremum], min_distance: usize) -> Vec<Extremum> {
    if min_distance <= 1 {
        return extrema.to_vec();
    }
    let stronger = |a: &Extremum, b: &Extremum| {
        a.amplitude.abs() > b.amplitude.abs()
            || (a.amplitude.abs() == b.amplitude.abs() && a.index < b.index)
    };
    let mut keep = vec![true; extrema.len()];
    for polarity in [Polarity::Max, Polarity::Min] {
        let class: Vec<usize> = (0..extrema.len())
            .filter(|&k| extrema[k].polarity == polarity)
            .collect();
        for (pos, &k) in class.iter().enumerate() {
            let me = &extrema[k];
            let left = class[..pos]
                .iter()
                .rev()
                .take_while(|&&o| me.index - extrema[o].index < min_distance);
            let right = class[pos + 1..]
                .iter()
                .take_while(|&&o| extrema[o].index - me.index < min_distance);
            if left.chain(right).any(|&o| stronger(&extrema[o], me)) {
                keep[k] = false;
            }
        }
    }
    extrema
        .iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(*e))
        .collect()
}

pub fn extract_extrema(
    seg: &SignalSegment,
    min_distance: usize,
    polarity: PolarityFilter,
) -> Result<Vec<Extremum>, RepError> {
    if !seg.preprocessed {
        return Err(RepError::NotPreprocessed(seg.segment_id.clone()));
    }
    let mut all = local_extrema(&seg.samples);
    if polarity == PolarityFilter::MaxOnly {
        all.retain(|e| e.polarity == Polarity::Max);
    }
    Ok(prune_by_distance(&all, min_distance))
}

/// Extracts extrema and timestamps them.
pub fn represent(
    seg: &SignalSegment,
    min_distance: usize,
    polarity: PolarityFilter,
    ts_scale: TsScale,
) -> Result<PeakRepresentation, RepError> {
    let extrema = extract_extrema(seg, min_distance, polarity)?;
    let mut entries: Vec<CandidatePeak> = Vec::with_capacity(extrema.len());
    for e in extrema {
        let timestamp = index_to_timestamp(e.index, ts_scale)?;
        if let Some(prev) = entries.last() {
            if prev.timestamp == timestamp {
                return Err(RepError::TimestampCollision {
                    first: prev.index,
                    second: e.index,
                    scale: ts_scale,
                });
            }
        }
        entries.push(CandidatePeak {
            index: e.index,
            amplitude: e.amplitude,
            polarity: e.polarity,
            timestamp,
        });
    }
    Ok(PeakRepresentation {
        segment_ref: seg.segment_id.clone(),
        fs: seg.fs,
        ts_scale,
        min_distance,
        entries,
    })
}

pub fn serialize(rep: &PeakRepresentation) -> String {
    let mut out = String::with_capacity(32 * rep.entries.len() + 24);
    out.push_str(TS_START);
    out.push('\n');
    for e in &rep.entries {
        out.push_str(&format!("({}, {:.6})\n", e.timestamp, e.amplitude));
    }
    out.push_str(TS_END);
    out
}

/// Inverse of [`serialize`].
///
/// The text carries no polarity, so it is inferred: every entry is a maximum
/// under [`PolarityFilter::MaxOnly`]; otherwise an entry is a maximum when
/// it is not below its listed neighbours. This recovers the true polarity
/// whenever maxima and minima alternate, which holds for unpruned extrema.
/// Ties, including a lone entry, go by sign: on z-scored data a lone strict
/// extremum is the global one, so a maximum is positive and a minimum negative.
pub fn parse_serialized(text: &str, meta: &RepMeta) -> Result<PeakRepresentation, RepError> {
    let body = text.trim();
    let start = body
        .find(TS_START)
        .ok_or(RepError::MissingSentinel(TS_START))?;
    let end = body.rfind(TS_END).ok_or(RepError::MissingSentinel(TS_END))?;
    if end < start {
        return Err(RepError::MissingSentinel(TS_END));
    }
    let first_line = body[..start].lines().count().max(1);
    let inner = &body[start + TS_START.len()..end];

    let mut pairs: Vec<(Timestamp, f64)> = Vec::new();
    for (k, raw) in inner.lines().enumerate() {
        let line_no = first_line + k;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = || RepError::MalformedPair {
            line: line_no,
            text: line.to_string(),
        };
        let inside = line
            .strip_prefix('(')
            .and_then(|l| l.strip_suffix(')'))
            .ok_or_else(malformed)?;
        let (ts, amp) = inside.split_once(',').ok_or_else(malformed)?;
        let ts: Timestamp = ts.trim().parse().map_err(|_| malformed())?;
        let amp: f64 = amp.trim().parse().map_err(|_| malformed())?;
        if !amp.is_finite() {
            return Err(malformed());
        }
        if pairs.last().is_some_and(|(prev, _)| *prev >= ts) {
            return Err(RepError::NonMonotonicTimestamps { line: line_no });
        }
        pairs.push((ts, amp));
    }

    let entries = pairs
        .iter()
        .enumerate()
        .map(|(k, &(timestamp, amplitude))| {
            let polarity = match meta.polarity {
                PolarityFilter::MaxOnly => Polarity::Max,
                PolarityFilter::Both => infer_polarity(&pairs, k),
            };
            CandidatePeak {
                index: timestamp_to_index(timestamp, meta.ts_scale),
                amplitude,
                polarity,
                timestamp,
            }
        })
        .collect();

    Ok(PeakRepresentation {
        segment_ref: meta.segment_ref.clone(),
        fs: meta.fs,
        ts_scale: meta.ts_scale,
        min_distance: meta.min_distance,
        entries,
    })
}

fn infer_polarity(pairs: &[(Timestamp, f64)], k: usize) -> Polarity {
    let amp = pairs[k].1;
    let neighbours = [k.checked_sub(1), Some(k + 1)]
        .into_iter()
        .flatten()
        .filter_map(|j| pairs.get(j).map(|p| p.1));
    let (mut lower, mut higher) = (0, 0);
    for n in neighbours {
        if n < amp {
            lower += 1;
        } else if n > amp {
            higher += 1;
        }
    }
    match lower.cmp(&higher) {
        std::cmp::Ordering::Greater => Polarity::Max,
        std::cmp::Ordering::Less => Polarity::Min,
        std::cmp::Ordering::Equal if amp >= 0.0 => Polarity::Max,
        std::cmp::Ordering::Equal => Polarity::Min,
    }
}

/// Fraction of samples kept by the representation.
pub fn retention_ratio(rep: &PeakRepresentation, seg: &SignalSegment) -> Result<f64, RepError> {
    if rep.segment_ref != seg.segment_id {
        return Err(RepError::SegmentMismatch {
            rep: rep.segment_ref.clone(),
            segment: seg.segment_id.clone(),
        });
    }
    Ok(rep.entries.len() as f64 / seg.samples.len() as f64)
}

impl PeakRepresentation {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(w) = self.entries.windows(2).find(|w| w[0].index >= w[1].index) {
            return Err(format!(
                "entries not strictly increasing ({} then {})",
                w[0].index, w[1].index
            ));
        }
        for pol in [Polarity::Max, Polarity::Min] {
            let idx: Vec<usize> = self
                .entries
                .iter()
                .filter(|e| e.polarity == pol)
                .map(|e| e.index)
                .collect();
            if self.min_distance > 1 {
                if let Some(w) = idx.windows(2).find(|w| w[1] - w[0] < self.min_distance) {
                    return Err(format!(
                        "{pol:?} entries {} and {} closer than {}",
                        w[0], w[1], self.min_distance
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn find_by_timestamp(&self, ts: Timestamp) -> Option<&CandidatePeak> {
        self.entries
            .binary_search_by_key(&ts, |e| e.timestamp)
            .ok()
            .map(|k| &self.entries[k])
    }
}
