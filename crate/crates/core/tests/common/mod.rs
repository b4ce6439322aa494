#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pip_core::alignment::{feature_cost, FeatureScale, FeatureSeries};
use pip_core::basis::{BasisSet, PHASE_PERIOD};
use pip_core::manifold::{PhaseManifold, PhaseSample};
use pip_core::model::{train, DofRole, DofSpec, PhaseInput, PipModel, TrainConfig};
use pip_core::synth::{generate, SynthConfig, SynthOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Frobenius-norm relative difference.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n + 3, |_, _| rng.random_range(-1.0..1.0));
    let mut m = &a * a.transpose() / (n + 3) as f64;
    for i in 0..n {
        m[(i, i)] += 0.05;
    }
    (&m + m.transpose()) * 0.5
}

/// Random model with the given roles. DOF 0 is the phase position and DOF 1
/// the phase velocity, so the first two roles must be observed.
pub fn random_model(rng: &mut impl Rng, roles: &[DofRole], counts: &[usize]) -> PipModel {
    assert_eq!(roles.len(), counts.len());
    assert!(roles.len() >= 2 && roles[0] == DofRole::Observed && roles[1] == DofRole::Observed);
    let dofs: Vec<DofSpec> = roles
        .iter()
        .enumerate()
        .map(|(d, &role)| {
            let spec = DofSpec::new(format!("dof{d}"), role, "u");
            match d {
                0 => spec.with_phase_input(PhaseInput::Position),
                1 => spec.with_phase_input(PhaseInput::Velocity),
                _ => spec,
            }
        })
        .collect();
    let bases: Vec<BasisSet> = counts
        .iter()
        .map(|&c| BasisSet::new(c, rng.random_range(1.0..12.0)).unwrap())
        .collect();
    let total: usize = counts.iter().sum();
    let prior_mean = DVector::from_fn(total, |_, _| rng.random_range(-2.0..2.0));
    let prior_cov = random_spd(rng, total);
    let noise = roles.iter().map(|_| rng.random_range(0.01..0.5)).collect();
    let samples: Vec<PhaseSample> = (0..200)
        .map(|i| {
            let phase = i as f64 * PHASE_PERIOD / 200.0;
            let a = phase * std::f64::consts::TAU / PHASE_PERIOD;
            PhaseSample {
                position: a.sin(),
                velocity: a.cos(),
                phase,
            }
        })
        .collect();
    let manifold = PhaseManifold::build(&samples, 50, 50).unwrap();
    let model = PipModel {
        dofs,
        bases,
        prior_mean,
        prior_cov,
        noise,
        manifold,
    };
    model.validate().unwrap();
    model
}

/// Joint Gaussian conditioning on stacked rows, written directly from the
/// textbook formula with an explicit LU inverse.
pub fn batch_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    r_diag: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(r_diag));
    let s = h * cov * h.transpose() + r;
    let s_inv = s.lu().try_inverse().expect("innovation matrix invertible");
    let gain = cov * h.transpose() * s_inv;
    let post_mean = mean + &gain * (y - h * mean);
    let post_cov = cov - &gain * h * cov;
    (post_mean, post_cov)
}

/// Minimum path cost by exhaustive enumeration of all admissible warp paths.
pub fn brute_force_dtw(u: &FeatureSeries, v: &FeatureSeries, scale: &FeatureScale) -> f64 {
    fn walk(u: &FeatureSeries, v: &FeatureSeries, scale: &FeatureScale, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + feature_cost(u.sample(i), v.sample(j), scale);
        if i + 1 == u.len() && j + 1 == v.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < u.len() && j + 1 < v.len() {
            walk(u, v, scale, i + 1, j + 1, acc, best);
        }
        if i + 1 < u.len() {
            walk(u, v, scale, i + 1, j, acc, best);
        }
        if j + 1 < v.len() {
            walk(u, v, scale, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(u, v, scale, 0, 0, 0.0, &mut best);
    best
}

pub fn random_series(rng: &mut impl Rng, len: usize) -> FeatureSeries {
    let mut col = || (0..len).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    let p = col();
    let v = col();
    let a = col();
    FeatureSeries::new(p, v, a).unwrap()
}

/// Builtin generator with a given training seed, plus a disjoint holdout set
/// drawn from another seed.
pub fn gait_split(train_seed: u64, holdout_cycles: usize) -> (SynthOutput, SynthOutput) {
    gait_split_with(train_seed, holdout_cycles, |_| {})
}

pub fn gait_split_with(
    train_seed: u64,
    holdout_cycles: usize,
    tweak: impl Fn(&mut SynthConfig),
) -> (SynthOutput, SynthOutput) {
    let mut cfg = SynthConfig::gait14();
    tweak(&mut cfg);
    cfg.seed = train_seed;
    let training = generate(&cfg).unwrap();
    cfg.seed = train_seed.wrapping_add(0x9e37_79b9);
    cfg.n_cycles = holdout_cycles;
    cfg.first_cycle_id = 1_000_000;
    let holdout = generate(&cfg).unwrap();
    (training, holdout)
}

pub fn gait_model(train_seed: u64) -> PipModel {
    let (training, _) = gait_split(train_seed, 1);
    train(&training.dataset, &TrainConfig::default()).unwrap().0
}

/// Peak-to-peak range of each DOF over the noiseless ground truth.
pub fn clean_peak_to_peak(out: &SynthOutput) -> Vec<f64> {
    let d = out.dataset.dofs().len();
    (0..d)
        .map(|k| {
            let (lo, hi) = out
                .truth
                .iter()
                .flat_map(|t| t.clean[k].iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect()
}

pub fn bits(m: &DMatrix<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}
