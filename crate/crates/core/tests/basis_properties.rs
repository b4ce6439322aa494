mod common;

use pip_core::alignment::compute_acceleration;
use pip_core::basis::{
    fit_weights, reconstruct, sample_phases, wrap_phase, BasisSet, WeightVector, MAX_KAPPA, PHASE_PERIOD,
};
use proptest::prelude::*;

fn weights(count: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, count)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn activations_are_strictly_positive(count in 1usize..30, kappa in 0.01..MAX_KAPPA, phi in -500.0..500.0f64) {
        let basis = BasisSet::new(count, kappa).unwrap();
        for v in basis.eval(phi) {
            prop_assert!(v > 0.0 && v.is_finite(), "activation {v} at kappa {kappa}");
        }
    }

    // Multiples of 2^-20 keep phi + 100 exactly representable.
    #[test]
    fn activations_repeat_exactly_every_period(count in 1usize..20, kappa in 0.1..50.0f64, k in 0u64..(100u64 << 20)) {
        let phi = k as f64 / (1u64 << 20) as f64;
        let basis = BasisSet::new(count, kappa).unwrap();
        prop_assert_eq!(basis.eval(phi), basis.eval(phi + PHASE_PERIOD));
        prop_assert_eq!(basis.eval(phi), basis.eval(phi - PHASE_PERIOD));
    }

    #[test]
    fn activations_repeat_for_arbitrary_phases(count in 1usize..20, kappa in 0.1..50.0f64, phi in 0.0..100.0f64, turns in -5i32..5) {
        let basis = BasisSet::new(count, kappa).unwrap();
        let a = basis.eval(phi);
        let b = basis.eval(phi + turns as f64 * PHASE_PERIOD);
        let peak = a.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn wrapped_phase_lies_in_period(phi in -1e6..1e6f64) {
        let w = wrap_phase(phi);
        prop_assert!((0.0..PHASE_PERIOD).contains(&w), "{phi} wrapped to {w}");
    }

    #[test]
    fn derivative_matches_central_differences(count in 2usize..20, kappa in 0.5..60.0f64, phi in 0.0..100.0f64) {
        let basis = BasisSet::new(count, kappa).unwrap();
        let h = 1e-5;
        let plus = basis.eval(phi + h);
        let minus = basis.eval(phi - h);
        let analytic = basis.eval_derivative(phi);
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = analytic
            .iter()
            .zip(plus.iter().zip(&minus))
            .map(|(a, (p, m))| ((p - m) / (2.0 * h) - a).abs())
            .fold(0.0, f64::max);
        prop_assert!(worst <= 1e-6 * scale, "fd error {worst} vs scale {scale}");
    }

    #[test]
    fn fit_reproduces_signals_in_the_span(count in 3usize..16, kappa in 0.5..20.0f64, w in weights(16), len in 60usize..300) {
        let basis = BasisSet::new(count, kappa).unwrap();
        let w = WeightVector(w[..count].to_vec());
        let phases: Vec<f64> = (0..len).map(|i| i as f64 * PHASE_PERIOD / len as f64).collect();
        let values: Vec<f64> = phases.iter().map(|&p| basis.combine(p, w.as_slice())).collect();
        let fit = fit_weights(&basis, &phases, &values, 1e-12).unwrap();
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (&p, &y) in phases.iter().zip(&values) {
            let r = basis.combine(p, fit.as_slice());
            prop_assert!((r - y).abs() <= 1e-6 * scale, "residual {} at phase {p}", r - y);
        }
    }

    #[test]
    fn fit_is_deterministic(count in 2usize..12, kappa in 0.5..20.0f64, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let basis = BasisSet::new(count, kappa).unwrap();
        let phases: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..100.0)).collect();
        let values: Vec<f64> = (0..80).map(|_| rng.random_range(-10.0..10.0)).collect();
        let a = fit_weights(&basis, &phases, &values, 1e-3).unwrap();
        let b = fit_weights(&basis, &phases, &values, 1e-3).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reconstruction_length_matches_samples(count in 1usize..12, samples in 1usize..500) {
        let basis = BasisSet::with_default_kappa(count).unwrap();
        let traj = reconstruct(&basis, &WeightVector(vec![1.0; count]), samples).unwrap();
        prop_assert_eq!(traj.values.len(), samples);
        prop_assert_eq!(traj.phases, sample_phases(samples));
    }

    #[test]
    fn acceleration_feature_matches_finite_differences(count in 3usize..15, w in weights(15), phi in 0.0..100.0f64) {
        let basis = BasisSet::with_default_kappa(count).unwrap();
        let w = WeightVector(w[..count].to_vec());
        let h = 1e-4;
        let acc = compute_acceleration(&basis, &w, &[phi])[0];
        let fd = (basis.combine(phi + h, w.as_slice()) - basis.combine(phi - h, w.as_slice())) / (2.0 * h);
        prop_assert!((acc - fd).abs() <= 1e-4 * (1.0 + fd.abs()), "analytic {acc}, fd {fd}");
    }
}

#[test]
fn known_weights_are_recovered() {
    let basis = BasisSet::new(8, 6.0).unwrap();
    let truth = WeightVector(vec![0.4, -1.2, 2.0, 0.0, 0.7, -0.3, 1.1, -2.2]);
    let phases: Vec<f64> = (0..400).map(|i| i as f64 * 0.25).collect();
    let values: Vec<f64> = phases.iter().map(|&p| basis.combine(p, truth.as_slice())).collect();
    let fit = fit_weights(&basis, &phases, &values, 0.0).unwrap();
    for (a, b) in fit.as_slice().iter().zip(truth.as_slice()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn invalid_fits_are_rejected() {
    let basis = BasisSet::new(4, 3.0).unwrap();
    assert!(fit_weights(&basis, &[1.0, 2.0], &[1.0], 0.0).is_err());
    assert!(fit_weights(&basis, &[], &[], 0.0).is_err());
    assert!(fit_weights(&basis, &[1.0], &[f64::NAN], 0.0).is_err());
    assert!(fit_weights(&basis, &[1.0], &[1.0], -1.0).is_err());
    assert!(reconstruct(&basis, &WeightVector(vec![0.0; 3]), 10).is_err());
    assert!(reconstruct(&basis, &WeightVector(vec![0.0; 4]), 0).is_err());
}
