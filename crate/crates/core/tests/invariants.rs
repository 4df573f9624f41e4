//! Cross-module properties over randomly drawn synthetic segments.

use proptest::prelude::*;

use peakrep_core::audit::{factual_consistency_check, reference_output, CheckTolerances};
use peakrep_core::evaluation::{cv_split, welch_t_test};
use peakrep_core::peak_representation::{
    index_to_timestamp, local_extrema, parse_serialized, prune_by_distance, represent, serialize,
    timestamp_to_index, Polarity, PolarityFilter, RepMeta,
};
use peakrep_core::preprocess::{butterworth_bandpass, preprocess_segment, FilterSpec};
use peakrep_core::reconstruction::{distance_sensitivity_sweep, spline_reconstruct};
use peakrep_core::reward::{format_model_output, score_output, RewardSettings};
use peakrep_core::signal_io::synthesize_segment;
use peakrep_core::{Modality, SignalSegment, SynthSpec, TsScale};

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![Just(Modality::Ecg), Just(Modality::Ppg), Just(Modality::Bcg)]
}

fn raw_segment() -> impl Strategy<Value = SignalSegment> {
    (modality(), any::<u64>(), 0.6f64..1.2, 0.0f64..0.1, prop_oneof![Just(100.0), Just(250.0)]).prop_map(
        |(m, seed, ibi, jitter, fs)| {
            let spec = SynthSpec {
                mean_ibi_s: ibi,
                ibi_jitter_frac: jitter,
                amplitude_jitter_frac: 0.05,
                ..SynthSpec::new(m, fs, (8.0 * fs) as usize, seed)
            };
            synthesize_segment(&spec).unwrap()
        },
    )
}

fn clean_segment() -> impl Strategy<Value = SignalSegment> {
    raw_segment().prop_map(|s| preprocess_segment(&s, &FilterSpec::new(s.fs)).unwrap())
}

fn scale() -> impl Strategy<Value = TsScale> {
    (1u64..4, 1u64..4).prop_map(|(a, b)| TsScale::new(a.max(b), a.min(b)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ground_truth_sits_on_strict_maxima_of_the_clean_waveform(seg in raw_segment()) {
        let maxima: Vec<usize> = local_extrema(&seg.samples)
            .into_iter()
            .filter(|e| e.polarity == Polarity::Max)
            .map(|e| e.index)
            .collect();
        for g in &seg.gt_peaks {
            prop_assert!(maxima.binary_search(g).is_ok(), "gt {} not a strict maximum", g);
        }
    }

    #[test]
    fn serialization_round_trips(seg in clean_segment(), d in 0usize..6, s in scale(), max_only in any::<bool>()) {
        let polarity = if max_only { PolarityFilter::MaxOnly } else { PolarityFilter::Both };
        let rep = represent(&seg, d, polarity, s).unwrap();
        let text = serialize(&rep);
        let back = parse_serialized(&text, &RepMeta::of(&rep, polarity)).unwrap();
        prop_assert_eq!(back.entries.len(), rep.entries.len());
        for (a, b) in back.entries.iter().zip(&rep.entries) {
            prop_assert_eq!(a.index, b.index);
            prop_assert_eq!(a.timestamp, b.timestamp);
            prop_assert_eq!(a.polarity, b.polarity);
            prop_assert!((a.amplitude - b.amplitude).abs() <= 5e-7);
        }
    }

    #[test]
    fn timestamps_are_strictly_increasing_and_invertible(s in scale(), idx in prop::collection::btree_set(0usize..100_000, 1..50)) {
        let ts: Vec<_> = idx.iter().map(|&i| index_to_timestamp(i, s).unwrap()).collect();
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        for (&i, t) in idx.iter().zip(&ts) {
            prop_assert_eq!(timestamp_to_index(*t, s), i);
        }
    }

    #[test]
    fn pruning_nests_and_keeps_the_global_extremes(seg in clean_segment(), d1 in 0usize..8, extra in 0usize..8) {
        let all = local_extrema(&seg.samples);
        let small = prune_by_distance(&all, d1);
        let large = prune_by_distance(&all, d1 + extra);
        let idx: Vec<usize> = small.iter().map(|e| e.index).collect();
        for e in &large {
            prop_assert!(idx.binary_search(&e.index).is_ok());
        }
        let strongest = all
            .iter()
            .filter(|e| e.polarity == Polarity::Max)
            .max_by(|a, b| a.amplitude.abs().total_cmp(&b.amplitude.abs()).then(b.index.cmp(&a.index)));
        if let Some(top) = strongest {
            prop_assert!(large.iter().any(|e| e.index == top.index));
        }
    }

    #[test]
    fn reconstruction_interpolates_its_knots(seg in clean_segment(), d in 0usize..6) {
        let rep = represent(&seg, d, PolarityFilter::Both, TsScale::ONE).unwrap();
        let n = seg.samples.len();
        let recon = spline_reconstruct(&rep, n, Some((seg.samples[0], seg.samples[n - 1]))).unwrap();
        for e in &rep.entries {
            prop_assert!((recon[e.index] - e.amplitude).abs() < 1e-9);
        }
        prop_assert!((recon[0] - seg.samples[0]).abs() < 1e-9);
    }

    #[test]
    fn retention_never_grows_with_distance(seg in clean_segment()) {
        let tol = 3;
        let sweep = distance_sensitivity_sweep(&seg, &[0, 2, 4, 8, 16], tol).unwrap();
        prop_assert!(sweep.windows(2).all(|w| w[1].1.retention <= w[0].1.retention));
    }

    #[test]
    fn zero_phase_filter_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = synthesize_segment(&SynthSpec { noise_sigma: 0.3, ..SynthSpec::new(Modality::Ppg, 100.0, 600, seed) }).unwrap().samples;
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * (i as f64 * 0.05).cos()).collect();
        let spec = FilterSpec::new(100.0);
        let fx = butterworth_bandpass(&x, &spec).unwrap();
        let fy = butterworth_bandpass(&y, &spec).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fmix = butterworth_bandpass(&mix, &spec).unwrap();
        for i in 0..x.len() {
            prop_assert!((fmix[i] - (a * fx[i] + b * fy[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn reference_answers_pass_every_check_and_earn_full_reward(seg in clean_segment(), s in scale()) {
        let rep = match represent(&seg, 0, PolarityFilter::Both, s) {
            Ok(r) => r,
            // Coarse scales can map neighbouring extrema to one timestamp.
            Err(_) => return Ok(()),
        };
        let label = seg.modality.peak_label();
        let raw = reference_output(&rep, &seg.gt_peaks, label).unwrap();
        let report = factual_consistency_check(&raw, Some(label), &rep, &seg.segment_id, &seg.gt_peaks, &CheckTolerances::default()).unwrap();
        prop_assert!(report.overall, "{:?}", report.failed_checks());
        if seg.gt_peaks.len() >= 3 {
            let total = score_output(&raw, Some(label), &seg.gt_peaks, seg.fs, s, &RewardSettings::default()).unwrap().total;
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropping_a_beat_lowers_the_reward(seg in clean_segment(), which in any::<prop::sample::Index>()) {
        prop_assume!(seg.gt_peaks.len() >= 4);
        let label = seg.modality.peak_label();
        let ts = |peaks: &[usize]| peaks.iter().map(|&i| index_to_timestamp(i, TsScale::ONE).unwrap()).collect::<Vec<_>>();
        let full = format_model_output(label, &ts(&seg.gt_peaks), "");
        let mut fewer = seg.gt_peaks.clone();
        fewer.remove(which.index(fewer.len()));
        let partial = format_model_output(label, &ts(&fewer), "");
        let settings = RewardSettings::default();
        let r_full = score_output(&full, Some(label), &seg.gt_peaks, seg.fs, TsScale::ONE, &settings).unwrap().total;
        let r_part = score_output(&partial, Some(label), &seg.gt_peaks, seg.fs, TsScale::ONE, &settings).unwrap().total;
        prop_assert!(r_part < r_full);
    }

    #[test]
    fn folds_partition_subjects(n in 2usize..40, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let f = cv_split(&ids, k, seed).unwrap();
        prop_assert_eq!(f.folds.len(), n);
        let sizes = f.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(f, cv_split(&ids, k, seed).unwrap());
    }

    #[test]
    fn welch_is_antisymmetric(a in prop::collection::vec(-10.0f64..10.0, 2..20), b in prop::collection::vec(-10.0f64..10.0, 2..20)) {
        if let (Ok(x), Ok(y)) = (welch_t_test(&a, &b), welch_t_test(&b, &a)) {
            prop_assert!((x.t_stat + y.t_stat).abs() < 1e-9 * (1.0 + x.t_stat.abs()));
            prop_assert!((x.p_two_tailed - y.p_two_tailed).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x.p_two_tailed));
        }
    }
}
