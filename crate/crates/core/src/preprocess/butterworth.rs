//! Butterworth band-pass design as cascaded second-order sections.
//!
//! The analog low-pass prototype of order N is shifted to a band-pass with
//! pre-warped edges, mapped to the z-plane by the bilinear transform, and
//! split into N biquads, each holding one conjugate pole pair and the zero
//! pair at z = +1 / z = -1.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::FilterSpec;

/// Normalized biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form II state after a unit step has settled.
    fn step_state(&self, input: f64) -> [f64; 2] {
        let y = input * self.dc_gain();
        [y - self.b[0] * input, self.b[2] * input - self.a[2] * y]
    }
}

pub fn design_bandpass(spec: &FilterSpec) -> Vec<Biquad> {
    let n = spec.order;
    let fs2 = 2.0 * spec.fs;
    let w_lo = fs2 * (PI * spec.low_hz / spec.fs).tan();
    let w_hi = fs2 * (PI * spec.high_hz / spec.fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut upper_poles = Vec::with_capacity(n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        for s in [half + disc, half - disc] {
            let z = (fs2 + s) / (fs2 - s);
            if z.im > 0.0 {
                upper_poles.push(z);
            }
        }
    }
    debug_assert_eq!(upper_poles.len(), n);

    // Overall gain: analog bw^N with N zeros at s = 0, carried through the bilinear map.
    let mut denom = Complex64::new(1.0, 0.0);
    for p in &upper_poles {
        let s_pole = fs2 * (p - 1.0) / (p + 1.0);
        denom *= (fs2 - s_pole) * (fs2 - s_pole.conj());
    }
    let gain = (bw * fs2).powi(n as i32) / denom.re;

    upper_poles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = if i == 0 { gain } else { 1.0 };
            Biquad {
                b: [g, 0.0, -g],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            }
        })
        .collect()
}

fn run(sos: &[Biquad], x: &[f64], state: &mut [[f64; 2]]) -> Vec<f64> {
    let mut y = x.to_vec();
    for (q, z) in sos.iter().zip(state.iter_mut()) {
        for v in y.iter_mut() {
            let input = *v;
            let out = q.b[0] * input + z[0];
            z[0] = q.b[1] * input - q.a[1] * out + z[1];
            z[1] = q.b[2] * input - q.a[2] * out;
            *v = out;
        }
    }
    y
}

/// Causal cascade filter starting from rest.
pub fn sosfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    run(sos, x, &mut vec![[0.0; 2]; sos.len()])
}

fn step_states(sos: &[Biquad], level: f64) -> Vec<[f64; 2]> {
    let mut input = level;
    sos.iter()
        .map(|q| {
            let s = q.step_state(input);
            input *= q.dc_gain();
            s
        })
        .collect()
}

/// Forward-backward filtering with odd (reflect-and-negate) padding of
/// `pad` samples per side and steady-state initial conditions.
pub fn sosfiltfilt(sos: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let mut fwd = run(sos, &ext, &mut step_states(sos, ext[0]));
    fwd.reverse();
    let mut back = run(sos, &fwd, &mut step_states(sos, fwd[0]));
    back.reverse();
    back[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from an established DSP library for the same design
    // (order 4, 0.6-15 Hz, fs 100, odd padding of 15 samples).
    fn fixture() -> Vec<f64> {
        (0..300)
            .map(|i| {
                let n = i as f64;
                (2.0 * PI * 5.0 * n / 100.0).sin()
                    + 0.5 * (2.0 * PI * 0.3 * n / 100.0).cos()
                    + 0.2 * (2.0 * PI * 22.0 * n / 100.0).sin()
                    + 0.01 * n
            })
            .collect()
    }

    #[test]
    fn matches_reference_library_zero_phase() {
        let y = sosfiltfilt(&design_bandpass(&FilterSpec::new(100.0)), &fixture(), 15);
        let expected = [
            (0, -0.27937826876219335),
            (1, 0.04851452685761881),
            (17, -0.8796182583661787),
            (100, -0.04270395074717506),
            (150, -0.04296706397177988),
            (233, -0.7686457969201955),
            (298, -0.16792325884758896),
            (299, 0.031200159798034754),
        ];
        for (i, v) in expected {
            assert!((y[i] - v).abs() < 1e-9, "index {i}: {} vs {v}", y[i]);
        }
    }

    #[test]
    fn matches_reference_library_causal() {
        let y = sosfilt(&design_bandpass(&FilterSpec::new(100.0)), &fixture());
        for (i, v) in [
            (0, 0.008127588274770586),
            (5, 0.9892105545540186),
            (50, 0.379322535705483),
            (299, -0.7382960941498885),
        ] {
            assert!((y[i] - v).abs() < 1e-9, "index {i}: {} vs {v}", y[i]);
        }
    }

    #[test]
    fn unit_gain_at_geometric_center() {
        let spec = FilterSpec::new(100.0);
        let sos = design_bandpass(&spec);
        let f0 = {
            // digital frequency whose pre-warped image is the analog center
            let w = |f: f64| (PI * f / spec.fs).tan();
            (w(spec.low_hz) * w(spec.high_hz)).sqrt().atan() * spec.fs / PI
        };
        let z = Complex64::from_polar(1.0, -2.0 * PI * f0 / spec.fs);
        let h = sos.iter().fold(Complex64::new(1.0, 0.0), |acc, q| {
            acc * (q.b[0] + q.b[1] * z + q.b[2] * z * z) / (q.a[0] + q.a[1] * z + q.a[2] * z * z)
        });
        assert!((h.norm() - 1.0).abs() < 1e-9, "{}", h.norm());
    }
}
