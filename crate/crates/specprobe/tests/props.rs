//! Property tests for the spec-level invariants.

mod common;

use ndarray::Array2;
use proptest::prelude::*;

use specprobe::probe::pearson;
use specprobe::signal::{common_average_reference, crop_sliding, Trial};
use specprobe::spectral::{
    apply_amplitude_perturbation, dft_forward, dft_inverse, AmplitudePerturbation,
};
use specprobe::windows::{fit_linear, fit_sinusoid, histogram, standardize};

fn finite_signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0..5.0f64, len..=len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn car_is_idempotent_and_zero_mean(rows in proptest::collection::vec(finite_signal(40), 2..5)) {
        let trial = common::trial_from_f64(&rows, 100.0);
        let once = common_average_reference(&trial);
        for col in once.trial.data().columns() {
            let m: f64 = col.iter().map(|&v| f64::from(v)).sum::<f64>() / col.len() as f64;
            prop_assert!(m.abs() < 1e-6);
        }
        let twice = common_average_reference(&once.trial);
        for (a, b) in twice.trial.data().iter().zip(once.trial.data().iter()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn crops_at_stride_window_partition_the_prefix(
        rows in proptest::collection::vec(finite_signal(53), 1..3),
        window in 1usize..20,
    ) {
        let trial = common::trial_from_f64(&rows, 100.0);
        let crops = crop_sliding(&trial, window, window).unwrap();
        let usable = (53 / window) * window;
        prop_assert_eq!(crops.len(), 53 / window);
        // Concatenating the crops reproduces the prefix exactly.
        for c in 0..trial.channels() {
            let mut rebuilt = Vec::new();
            for crop in &crops {
                rebuilt.extend(crop.row(c).iter().cloned());
            }
            prop_assert_eq!(rebuilt.len(), usable);
            for (t, v) in rebuilt.iter().enumerate() {
                prop_assert_eq!(*v, trial.data()[[c, t]]);
            }
        }
    }

    #[test]
    fn dft_round_trip_and_parseval(signal in finite_signal(61), even in proptest::bool::ANY) {
        let mut signal = signal;
        if even { signal.push(0.25); }
        let trial = common::trial_from_f64(&[signal.clone()], 100.0);
        let spectrum = dft_forward(&trial).unwrap();
        let back = dft_inverse(&spectrum).unwrap();
        let max_abs = trial.data_f64().iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (a, b) in back.iter().zip(trial.data_f64().iter()) {
            prop_assert!((a - b).abs() < 1e-5 * max_abs);
        }
        // Parseval under the tone-amplitude normalization.
        let t = trial.time() as f64;
        let energy: f64 = trial.data_f64().iter().map(|v| v * v).sum();
        let amps = spectrum.amplitudes();
        let bins = spectrum.bins();
        let mut spectral = amps[[0, 0]] * amps[[0, 0]];
        let mid_end = if spectrum.has_nyquist() { bins - 1 } else { bins };
        for k in 1..mid_end {
            spectral += amps[[0, k]] * amps[[0, k]] / 2.0;
        }
        if spectrum.has_nyquist() {
            spectral += amps[[0, bins - 1]] * amps[[0, bins - 1]];
        }
        spectral *= t;
        prop_assert!((energy - spectral).abs() <= 1e-4 * energy.max(1e-9),
            "energy {energy} vs spectral {spectral}");
    }

    #[test]
    fn sequential_amplitude_perturbations_compose_multiplicatively(
        signal in finite_signal(40),
        seed in 0u64..1000,
    ) {
        let trial = common::trial_from_f64(&[signal], 100.0);
        let mut rng = specprobe::rng::substream(seed, 1, 0);
        let p1 = AmplitudePerturbation::sample(21, 1, 0.02, &mut rng);
        let p2 = AmplitudePerturbation::sample(21, 1, 0.02, &mut rng);
        let combined = AmplitudePerturbation::new(p1.factors() * p2.factors()).unwrap();
        let a = apply_amplitude_perturbation(
            &apply_amplitude_perturbation(&trial, &p1).unwrap(),
            &p2,
        )
        .unwrap();
        let b = apply_amplitude_perturbation(&trial, &combined).unwrap();
        let max_abs = trial.data_f64().iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            prop_assert!((x - y).abs() < 1e-5 * max_abs as f32);
        }
    }

    #[test]
    fn pearson_bounded_and_shift_scale_invariant(
        x in finite_signal(12),
        y in finite_signal(12),
        shift in -10.0..10.0f64,
        scale in 0.1..10.0f64,
    ) {
        let c = pearson(&x, &y).unwrap();
        prop_assert!(c.r >= -1.0 && c.r <= 1.0);
        if !c.degenerate {
            let y2: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
            let c2 = pearson(&x, &y2).unwrap();
            prop_assert!((c.r - c2.r).abs() < 1e-9);
        }
    }

    #[test]
    fn sine_fit_beats_linear_on_grid_tones(
        len in 24usize..80,
        k_frac in 0.0..1.0f64,
        phase in -3.1..3.1f64,
        offset in -2.0..2.0f64,
    ) {
        // On-grid tone with at least one full period.
        let max_k = len / 2;
        let k = 1 + ((max_k - 1) as f64 * k_frac) as usize;
        let y: Vec<f64> = (0..len)
            .map(|x| offset + (2.0 * std::f64::consts::PI * k as f64 * x as f64 / len as f64 + phase).cos())
            .collect();
        let sine = fit_sinusoid(&y, false).unwrap();
        let lin = fit_linear(&y).unwrap();
        prop_assert!(sine.mse <= lin.mse + 1e-12);
        prop_assert!(sine.mse < 1e-9, "on-grid tone should fit exactly, mse {}", sine.mse);
    }

    #[test]
    fn standardize_output_is_standard(xs in finite_signal(16)) {
        let s = standardize(&xs).unwrap();
        if !s.degenerate {
            let n = s.values.len() as f64;
            let mean = s.values.iter().sum::<f64>() / n;
            let var = s.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_totals(values in proptest::collection::vec(-4.0..4.0f64, 0..60)) {
        let edges = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let h = histogram(&values, &edges).unwrap();
        let in_range = values.iter().filter(|&&v| (-2.0..=2.0).contains(&v)).count();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), in_range);
        if in_range == values.len() && !values.is_empty() {
            prop_assert!((h.relative.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn reanalysis_confirms_perturbation_separation() {
    // Amplitude perturbation leaves phases; phase perturbation leaves
    // amplitudes (re-analysis within 1e-5).
    let signal = common::random_signal(120, 5);
    let trial = common::trial_from_f64(&[signal], 100.0);
    let before = dft_forward(&trial).unwrap();

    let mut rng = specprobe::rng::substream(9, 2, 0);
    let amp = AmplitudePerturbation::sample(61, 1, 0.02, &mut rng);
    let perturbed = apply_amplitude_perturbation(&trial, &amp).unwrap();
    let after = dft_forward(&perturbed).unwrap();
    for k in 1..60 {
        if before.amplitudes()[[0, k]] > 1e-3 {
            let d = common::circular_diff(after.phases()[[0, k]], before.phases()[[0, k]]);
            assert!(d.abs() < 1e-5, "bin {k} phase moved {d}");
        }
    }

    let phase = specprobe::spectral::PhasePerturbation::sample(
        61,
        std::f64::consts::PI,
        &mut rng,
    );
    let perturbed = specprobe::spectral::apply_phase_perturbation(&trial, &phase).unwrap();
    let after = dft_forward(&perturbed).unwrap();
    for k in 0..61 {
        let a = before.amplitudes()[[0, k]];
        let b = after.amplitudes()[[0, k]];
        assert!((a - b).abs() < 1e-5 * a.max(1.0), "bin {k}: {a} vs {b}");
    }
}

#[test]
fn zero_amplitude_spectrum_synthesizes_zero() {
    let trial = common::trial_from_f64(&[common::random_signal(50, 3)], 100.0);
    let spectrum = dft_forward(&trial).unwrap();
    let zeroed = spectrum
        .with_amplitude_factors(&AmplitudePerturbation::new(Array2::from_elem((26, 1), 1e-12)).unwrap())
        .unwrap();
    let out = dft_inverse(&zeroed).unwrap();
    assert!(out.iter().all(|&v| v.abs() < 1e-10));
}
