use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{Dataset, PhaseInput, PipModel};
use crate::alignment::{align_demonstrations, compute_acceleration, DtwOptions, FeatureSeries};
use crate::basis::{fit_weights, default_kappa, BasisSet, WeightVector, DEFAULT_BASIS_COUNT};
use crate::error::{Error, Result};
use crate::manifold::{PhaseManifold, PhaseSample, DEFAULT_POSITION_BINS, DEFAULT_VELOCITY_BINS};

/// Noise variances never drop below this fraction of the squared DOF range.
const NOISE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Basis count for DOFs without an override.
    pub basis_count: usize,
    /// Per-DOF basis count overrides, keyed by DOF name.
    pub basis_overrides: BTreeMap<String, usize>,
    /// Fixed concentration for every DOF; `None` uses
    /// [`default_kappa`](crate::basis::default_kappa) for each DOF's basis count.
    pub kappa: Option<f64>,
    /// Ridge strength relative to the mean diagonal of the design Gram matrix.
    pub ridge: f64,
    pub position_bins: usize,
    pub velocity_bins: usize,
    pub dtw_band: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            basis_count: DEFAULT_BASIS_COUNT,
            basis_overrides: BTreeMap::new(),
            kappa: None,
            ridge: 1e-6,
            position_bins: DEFAULT_POSITION_BINS,
            velocity_bins: DEFAULT_VELOCITY_BINS,
            dtw_band: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub cycles: usize,
    pub total_basis: usize,
    /// Index of the cycle used as alignment reference.
    pub reference_cycle: usize,
    /// RMS of the weight-fit residual per DOF, in model order.
    pub residual_rms: Vec<f64>,
    /// Phase labels assigned to every training cycle.
    pub phase_labels: Vec<Vec<f64>>,
}

/// Unbiased per-DOF variance of the residuals, floored at
/// `1e-8 * peak_to_peak^2` (or a tiny absolute value for constant DOFs).
pub fn estimate_noise(residuals: &[Vec<f64>], peak_to_peak: &[f64]) -> Vec<f64> {
    residuals
        .iter()
        .zip(peak_to_peak)
        .map(|(r, &ptp)| {
            let floor = (NOISE_FLOOR * ptp * ptp).max(1e-12);
            let n = r.len();
            if n < 2 {
                return floor;
            }
            let mean = r.iter().sum::<f64>() / n as f64;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            var.max(floor)
        })
        .collect()
}

fn time_ramp(times: &[f64]) -> Vec<f64> {
    let (t0, t1) = (times[0], times[times.len() - 1]);
    times.iter().map(|t| (t - t0) / (t1 - t0) * 100.0).collect()
}

fn fit_relative(basis: &BasisSet, phases: &[f64], values: &[f64], ridge_rel: f64) -> Result<WeightVector> {
    let mut row = vec![0.0; basis.count()];
    let mut trace = 0.0;
    for &phi in phases {
        basis.eval_into(phi, &mut row);
        trace += row.iter().map(|v| v * v).sum::<f64>();
    }
    let ridge = ridge_rel * trace / basis.count() as f64;
    fit_weights(basis, phases, values, ridge)
}

/// Learns a model from pre-segmented cycles.
///
/// Steps: provisional velocity fits give the acceleration feature; DTW
/// alignment labels every sample with a phase; per-cycle, per-DOF weights
/// are fitted at those phases; their sample mean and covariance form the
/// prior; the phase-input DOF pair and the labels give the manifold; fit
/// residuals at the manifold's phase for each sample give the noise model.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(PipModel, TrainSummary)> {
    let cycles = dataset.cycles();
    let n = cycles.len();
    if n == 0 {
        return Err(Error::invalid("dataset has no cycles"));
    }
    if !(config.ridge.is_finite() && config.ridge >= 0.0) {
        return Err(Error::invalid("ridge must be finite and nonnegative"));
    }
    let dofs = dataset.dofs().to_vec();
    for name in config.basis_overrides.keys() {
        if dataset.dof_index(name).is_none() {
            return Err(Error::invalid(format!("basis override for unknown DOF `{name}`")));
        }
    }
    let bases = dofs
        .iter()
        .map(|d| {
            let count = config.basis_overrides.get(&d.name).copied().unwrap_or(config.basis_count);
            let kappa = config.kappa.unwrap_or_else(|| default_kappa(count));
            BasisSet::new(count, kappa).map_err(|e| Error::invalid(format!("DOF `{}`: {e}", d.name)))
        })
        .collect::<Result<Vec<_>>>()?;

    let pos_idx = dofs.iter().position(|d| d.phase_input == Some(PhaseInput::Position)).unwrap();
    let vel_idx = dofs.iter().position(|d| d.phase_input == Some(PhaseInput::Velocity)).unwrap();

    // (1) provisional velocity fits at time-linear phases -> acceleration
    let features = cycles
        .iter()
        .map(|c| {
            let ramp = time_ramp(&c.times);
            let vel = &c.columns[vel_idx];
            let w = fit_relative(&bases[vel_idx], &ramp, vel, config.ridge)?;
            let acc = compute_acceleration(&bases[vel_idx], &w, &ramp);
            FeatureSeries::new(c.columns[pos_idx].clone(), vel.clone(), acc)
        })
        .collect::<Result<Vec<_>>>()?;

    // (2) alignment
    let aligned = align_demonstrations(&features, DtwOptions { band: config.dtw_band })?;

    // (3) per-cycle, per-DOF weights at the aligned phases
    let total: usize = bases.iter().map(BasisSet::count).sum();
    let mut weights = DMatrix::<f64>::zeros(n, total);
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); dofs.len()];
    for (k, c) in cycles.iter().enumerate() {
        let phases = &aligned.labels[k];
        let mut offset = 0;
        for (d, basis) in bases.iter().enumerate() {
            let w = fit_relative(basis, phases, &c.columns[d], config.ridge)?;
            for (i, &v) in w.as_slice().iter().enumerate() {
                weights[(k, offset + i)] = v;
            }
            residuals[d].extend(
                phases
                    .iter()
                    .zip(&c.columns[d])
                    .map(|(&phi, &y)| y - basis.combine(phi, w.as_slice())),
            );
            offset += basis.count();
        }
    }

    // (4) prior
    let (prior_mean, prior_cov) = weight_prior(&weights);

    let residual_rms = residuals
        .iter()
        .map(|r| (r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64).sqrt())
        .collect();

    // (5) manifold
    let samples: Vec<PhaseSample> = cycles
        .iter()
        .zip(&aligned.labels)
        .flat_map(|(c, labels)| {
            labels.iter().enumerate().map(move |(t, &phase)| PhaseSample {
                position: c.columns[pos_idx][t],
                velocity: c.columns[vel_idx][t],
                phase,
            })
        })
        .collect();
    let manifold = PhaseManifold::build(&samples, config.position_bins, config.velocity_bins)?;

    // (6) noise, from each cycle's fit evaluated where the table places its
    // samples; this folds the table's phase error into the measurement noise
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); dofs.len()];
    for (k, c) in cycles.iter().enumerate() {
        let phases: Vec<f64> = (0..c.len())
            .map(|t| manifold.lookup_unchecked(c.columns[pos_idx][t], c.columns[vel_idx][t]))
            .collect();
        let mut offset = 0;
        for (d, basis) in bases.iter().enumerate() {
            let w = weights.view((k, offset), (1, basis.count()));
            residuals[d].extend(phases.iter().zip(&c.columns[d]).map(|(&phi, &y)| {
                y - basis.eval(phi).iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>()
            }));
            offset += basis.count();
        }
    }
    let noise = estimate_noise(&residuals, &dataset.peak_to_peak());

    let model = PipModel {
        dofs,
        bases,
        prior_mean,
        prior_cov,
        noise,
        manifold,
    };
    model
        .validate()
        .map_err(|e| Error::Numeric(format!("trained model failed validation: {e}")))?;
    let summary = TrainSummary {
        cycles: n,
        total_basis: total,
        reference_cycle: aligned.medoid,
        residual_rms,
        phase_labels: aligned.labels,
    };
    Ok((model, summary))
}

/// Sample mean and regularized sample covariance of the rows of `weights`.
///
/// The mean is accumulated as offsets from the first row so identical rows
/// give an exactly zero spread.
fn weight_prior(weights: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, b) = weights.shape();
    let first = weights.row(0).transpose();
    let mut shift = DVector::<f64>::zeros(b);
    for k in 0..n {
        shift += weights.row(k).transpose() - &first;
    }
    let mean = &first + shift / n as f64;

    let mut cov = DMatrix::<f64>::zeros(b, b);
    if n > 1 {
        let centered = DMatrix::from_fn(n, b, |k, i| weights[(k, i)] - mean[i]);
        for i in 0..b {
            for j in i..b {
                let s = centered.column(i).dot(&centered.column(j)) / (n - 1) as f64;
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
    }
    let trace = cov.trace();
    let eps = if trace > 0.0 { 1e-6 * trace / b as f64 } else { 1e-8 };
    for i in 0..b {
        cov[(i, i)] += eps;
    }
    (mean, cov)
}
