mod common;

use nalgebra::{DMatrix, DVector};
use pip_core::basis::{reconstruct, WeightVector};
use pip_core::eval::compare_baseline;
use pip_core::inference::{build_observation_matrix, phase_distance, DtwPhaseBaseline, Engine, ObservationFrame};
use pip_core::model::{encode_model, DofRole, PipModel};
use pip_core::synth::SynthConfig;
use pip_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn block(model: &PipModel, d: usize) -> std::ops::Range<usize> {
    let off = model.block_offsets()[d];
    off..off + model.bases[d].count()
}

fn observed(model: &PipModel) -> Vec<usize> {
    (0..model.dof_count()).filter(|&d| model.dofs[d].role == DofRole::Observed).collect()
}

fn scored(model: &PipModel) -> Vec<usize> {
    (0..model.dof_count()).filter(|&d| model.dofs[d].role != DofRole::Observed).collect()
}

#[test]
fn fresh_engine_predicts_the_prior() {
    let model = common::gait_model(1);
    let engine = Engine::new(&model);
    for d in 0..model.dof_count() {
        let band = engine.predict(&model.dofs[d].name, 100).unwrap();
        let r = block(&model, d);
        let w = WeightVector(model.prior_mean.as_slice()[r.clone()].to_vec());
        let prior = reconstruct(&model.bases[d], &w, 100).unwrap();
        assert_eq!(band.trajectory.phases, prior.phases);
        let cov = model.prior_cov.view((r.start, r.start), (r.len(), r.len()));
        for (i, &phi) in prior.phases.iter().enumerate() {
            assert!((band.trajectory.values[i] - prior.values[i]).abs() <= 1e-12 * (1.0 + prior.values[i].abs()));
            let act = DVector::from_vec(model.bases[d].eval(phi));
            let std = (act.dot(&(cov * &act))).sqrt();
            assert!((band.std[i] - std).abs() <= 1e-12 * (1.0 + std));
        }
    }
}

#[test]
fn engines_do_not_share_belief_and_leave_the_model_alone() {
    let model = common::gait_model(1);
    let before = encode_model(&model);
    let (_, holdout) = common::gait_split(1, 10);
    let mut busy = Engine::new(&model);
    let idle = Engine::new(&model);
    let mut steps = 0;
    'outer: loop {
        for cycle in holdout.dataset.cycles() {
            for t in 0..cycle.len() {
                busy.step(&ObservationFrame::from_row(&cycle.row(t))).unwrap();
                steps += 1;
                if steps == 1000 {
                    break 'outer;
                }
            }
            busy.reset();
        }
    }
    assert_eq!(idle.belief().mean, model.prior_mean);
    assert_eq!(idle.belief().cov, model.prior_cov);
    assert_eq!(idle.belief().step_count, 0);
    assert_eq!(encode_model(&model), before);

    busy.reset();
    assert_eq!(busy.belief(), idle.belief());
}

#[test]
fn observation_matrix_is_block_diagonal_over_present_sensors() {
    let model = common::gait_model(2);
    let obs = observed(&model);
    let mut mask = vec![true; model.dof_count()];
    mask[obs[3]] = false;
    let phi = 37.5;
    let h = build_observation_matrix(&model, phi, &mask);
    let rows: Vec<usize> = obs.iter().copied().filter(|&d| mask[d]).collect();
    assert_eq!(h.shape(), (rows.len(), model.total_basis()));
    for (r, &d) in rows.iter().enumerate() {
        let cols = block(&model, d);
        let act = model.bases[d].eval(phi);
        for c in 0..model.total_basis() {
            let expected = if cols.contains(&c) { act[c - cols.start] } else { 0.0 };
            assert_eq!(h[(r, c)], expected);
        }
    }
    let none = build_observation_matrix(&model, phi, &vec![false; model.dof_count()]);
    assert_eq!(none.nrows(), 0);
}

#[test]
fn frames_without_usable_readings_leave_the_belief_alone() {
    let model = common::gait_model(2);
    let mut engine = Engine::new(&model);
    let prior = engine.belief().clone();
    let empty = ObservationFrame::new(vec![None; model.dof_count()]);
    assert_eq!(engine.condition(12.0, &empty).unwrap(), 0);
    assert_eq!(engine.belief(), &prior);

    assert!(matches!(engine.step(&empty), Err(Error::PhaseUnavailable)));
    assert_eq!(engine.belief(), &prior);

    let (training, _) = common::gait_split(2, 1);
    let row = training.dataset.cycles()[0].row(5);
    let mut frame = ObservationFrame::from_row(&row);
    frame.values[observed(&model)[4]] = Some(f64::NAN);
    assert!(matches!(engine.step(&frame), Err(Error::InvalidArgument(_))));
    assert_eq!(engine.belief(), &prior);

    let short = ObservationFrame::from_row(&row[..row.len() - 1]);
    assert!(engine.step(&short).is_err());
    assert!(engine.condition(f64::INFINITY, &ObservationFrame::from_row(&row)).is_err());
    assert_eq!(engine.belief(), &prior);

    // non-observed slots are ignored, whatever they hold
    let mut frame = ObservationFrame::from_row(&row);
    for d in scored(&model) {
        frame.values[d] = Some(f64::NAN);
    }
    engine.step(&frame).unwrap();
    assert_eq!(engine.belief().step_count, 1);
}

#[test]
fn overwhelming_noise_makes_updates_negligible() {
    let mut model = common::gait_model(3);
    let (training, holdout) = common::gait_split(3, 1);
    let ptp = training.dataset.peak_to_peak();
    for d in observed(&model) {
        model.noise[d] = 1e9 * ptp[d] * ptp[d];
    }
    let mut engine = Engine::new(&model);
    let cycle = &holdout.dataset.cycles()[0];
    for t in 0..cycle.len() {
        engine.step(&ObservationFrame::from_row(&cycle.row(t))).unwrap();
    }
    let rel = (&engine.belief().mean - &model.prior_mean).norm() / model.prior_mean.norm();
    assert!(rel < 1e-6, "mean moved by {rel}");
}

#[test]
fn dense_noiseless_observation_collapses_observed_bands() {
    // Posterior spread falls as 1/sqrt(n) against the model's measurement noise.
    let model = common::gait_model(4);
    let cfg = SynthConfig::gait14();
    let scales = vec![1.0; cfg.dofs.len()];
    let mut engine = Engine::new(&model);
    let prior = Engine::new(&model);
    let mut looked_up = Engine::new(&model);
    for i in 0..10_000 {
        let phi = i as f64 * 0.01;
        let row: Vec<f64> = (0..cfg.dofs.len()).map(|d| cfg.clean_value(d, phi, &scales)).collect();
        let frame = ObservationFrame::from_row(&row);
        engine.condition(phi, &frame).unwrap();
        looked_up.step(&frame).unwrap();
    }
    for d in observed(&model) {
        let name = &model.dofs[d].name;
        let before = prior.predict(name, 100).unwrap();
        let after = engine.predict(name, 100).unwrap();
        let via_lookup = looked_up.predict(name, 100).unwrap();
        for (i, (a, b)) in after.std.iter().zip(&before.std).enumerate() {
            assert!(a < &(0.1 * b), "{name} at sample {i}: std {a} vs prior {b}");
            let c = via_lookup.std[i];
            assert!(c < 0.1 * b, "{name} at sample {i}, looked-up phases: std {c} vs prior {b}");
        }
    }
}

#[test]
fn conditioning_improves_latent_predictions() {
    let model = common::gait_model(5);
    let (_, holdout) = common::gait_split(5, 10);
    let targets = scored(&model);
    let mut prior_err = vec![0.0; model.dof_count()];
    let mut post_err = vec![0.0; model.dof_count()];
    for (cycle, truth) in holdout.dataset.cycles().iter().zip(&holdout.truth) {
        let mut engine = Engine::new(&model);
        let prior = Engine::new(&model);
        let mut phases = Vec::with_capacity(cycle.len());
        for t in 0..cycle.len() {
            phases.push(engine.step(&ObservationFrame::from_row(&cycle.row(t))).unwrap());
        }
        for &d in &targets {
            for (t, &phi) in phases.iter().enumerate() {
                let clean = truth.clean[d][t];
                prior_err[d] += (prior.predict_at(d, phi).0 - clean).abs();
                post_err[d] += (engine.predict_at(d, phi).0 - clean).abs();
            }
        }
    }
    for &d in &targets {
        assert!(
            post_err[d] < prior_err[d],
            "{}: posterior error {} not below prior {}",
            model.dofs[d].name,
            post_err[d],
            prior_err[d]
        );
    }
}

#[test]
fn baseline_recovers_prefixes_of_its_reference() {
    let model = common::gait_model(6);
    let baseline = DtwPhaseBaseline::new(&model, 100).unwrap();
    let offsets = model.block_offsets();
    let pos = model.phase_input_index(pip_core::model::PhaseInput::Position);
    let vel = model.phase_input_index(pip_core::model::PhaseInput::Velocity);
    let eval = |d: usize, phi: f64| {
        let w = model.prior_mean.rows(offsets[d], model.bases[d].count());
        model.bases[d].combine(phi, w.as_slice())
    };
    let phases = baseline.reference_phases();
    for k in [2usize, 10, 33, 64, 99] {
        let history: Vec<(f64, f64)> = phases[..=k].iter().map(|&phi| (eval(pos, phi), eval(vel, phi))).collect();
        let est = baseline.estimate(&history).unwrap();
        assert!(phase_distance(est, phases[k]) <= 1.0, "prefix to {k}: {est} vs {}", phases[k]);
    }
    assert!(baseline.estimate(&[(0.0, 0.0)]).is_err());
}

#[test]
fn lookup_agrees_with_the_dtw_baseline_on_clean_cycles() {
    let model = common::gait_model(7);
    let (_, holdout) = common::gait_split_with(7, 3, |cfg| {
        for d in &mut cfg.dofs {
            d.noise_std = 0.0;
        }
    });
    let cmp = compare_baseline(&model, &holdout.dataset, 100).unwrap();
    assert!(cmp.median_phase_difference < 3.0, "median {}", cmp.median_phase_difference);
}

#[test]
fn predict_rejects_bad_requests() {
    let model = common::gait_model(1);
    let engine = Engine::new(&model);
    assert!(engine.predict("missing", 10).is_err());
    assert!(engine.predict(&model.dofs[0].name, 0).is_err());
}

fn random_frame(rng: &mut impl Rng, model: &PipModel, keep: f64) -> ObservationFrame {
    ObservationFrame::new(
        (0..model.dof_count())
            .map(|_| rng.random_bool(keep).then(|| rng.random_range(-3.0..3.0)))
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sequential_updates_match_batch_conditioning(seed in any::<u64>(), frames in 1usize..6) {
        let mut rng = common::rng(seed);
        let roles = [DofRole::Observed, DofRole::Observed, DofRole::Observed, DofRole::Latent, DofRole::Controlled];
        let counts: Vec<usize> = (0..roles.len()).map(|_| rng.random_range(2..7)).collect();
        let model = common::random_model(&mut rng, &roles, &counts);
        let mut engine = Engine::new(&model);
        let mut hs = Vec::new();
        let mut ys = Vec::new();
        let mut rs = Vec::new();
        for _ in 0..frames {
            let frame = random_frame(&mut rng, &model, 0.7);
            let phi = rng.random_range(0.0..100.0);
            engine.condition(phi, &frame).unwrap();
            let h = build_observation_matrix(&model, phi, &frame.mask());
            hs.push(h);
            for d in observed(&model) {
                if let Some(y) = frame.values[d] {
                    ys.push(y);
                    rs.push(model.noise[d]);
                }
            }
        }
        let rows: usize = hs.iter().map(|h| h.nrows()).sum();
        let mut h = DMatrix::zeros(rows, model.total_basis());
        let mut r0 = 0;
        for part in &hs {
            h.view_mut((r0, 0), part.shape()).copy_from(part);
            r0 += part.nrows();
        }
        let (mean, cov) = common::batch_condition(&model.prior_mean, &model.prior_cov, &h, &DVector::from_vec(ys), &rs);
        prop_assert!(common::rel_diff_vec(&engine.belief().mean, &mean) < 1e-8);
        prop_assert!(common::rel_diff(&engine.belief().cov, &cov) < 1e-8);
    }

    #[test]
    fn uncertainty_never_grows(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let roles = [DofRole::Observed, DofRole::Observed, DofRole::Observed, DofRole::Latent];
        let counts: Vec<usize> = (0..roles.len()).map(|_| rng.random_range(2..9)).collect();
        let model = common::random_model(&mut rng, &roles, &counts);
        let mut engine = Engine::new(&model);
        let mut trace = engine.belief().cov.trace();
        for _ in 0..40 {
            let frame = random_frame(&mut rng, &model, 0.6);
            match engine.step(&frame) {
                Ok(_) | Err(Error::PhaseUnavailable) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            let next = engine.belief().cov.trace();
            prop_assert!(next <= trace, "trace grew from {} to {}", trace, next);
            trace = next;
            let cov = &engine.belief().cov;
            prop_assert_eq!(cov, &cov.transpose());
        }
    }
}
