//! Signal-to-sequence peak representation for cardiac signals.
//!
//! The crate covers the full pipeline around a language-model peak detector,
//! except the model itself:
//!
//! * [`signal_io`]: segment records on disk and seeded synthetic ECG/PPG/BCG.
//! * [`preprocess`]: windowing, zero-phase Butterworth band-pass, z-scoring.
//! * [`peak_representation`]: extrema extraction, calendar timestamps and the
//!   `<TS_START>` … `<TS_END>` text grammar.
//! * [`reconstruction`]: natural cubic spline reconstruction and fidelity metrics.
//! * [`detectors`]: classical baselines (Pan-Tompkins, Nabian, Elgendi, Bishop, Choi).
//! * [`evaluation`]: tolerance matching, P/R/F1, HR/HRV errors, CV folds, Welch's t-test.
//! * [`reward`]: the four-component reward used to score model answers.
//! * [`audit`]: rule-based explanation checks, review bundles and the label log.

pub mod audit;
pub mod detectors;
pub mod evaluation;
pub mod peak_representation;
pub mod preprocess;
pub mod reconstruction;
pub mod reward;
pub mod rng;
pub mod signal_io;

pub use peak_representation::{CandidatePeak, PeakRepresentation, Polarity, Timestamp, TsScale};
pub use signal_io::{Modality, SignalSegment, SynthSpec};
