//! Run-time loop: phase lookup, Gaussian conditioning of the weight belief on
//! each sensor frame, and reconstruction of every DOF with uncertainty.
//!
//! The weight vector is time-invariant, so there is no predict step: each
//! frame applies a Kalman measurement update with identity dynamics.

use nalgebra::{DMatrix, DVector};

use crate::alignment::{subsequence_dtw_end, FeatureScale, FeatureSeries};
use crate::basis::{sample_phases, wrap_phase, Trajectory, PHASE_PERIOD};
use crate::error::{Error, Result};
use crate::model::{DofRole, PhaseInput, PipModel};

/// Gaussian belief over the concatenated weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub step_count: u64,
}

/// One frame of sensor readings, one slot per model DOF. `None` marks a
/// missing reading. Slots of latent and controlled DOFs are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub values: Vec<Option<f64>>,
}

impl ObservationFrame {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        Self { values }
    }

    /// Every slot present.
    pub fn from_row(row: &[f64]) -> Self {
        Self {
            values: row.iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_some).collect()
    }

    /// Copy with the given DOF slots removed.
    pub fn without(&self, masked: &[usize]) -> Self {
        let mut values = self.values.clone();
        for &d in masked {
            if let Some(v) = values.get_mut(d) {
                *v = None;
            }
        }
        Self { values }
    }
}

/// Mean trajectory of one DOF with its pointwise standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBand {
    pub dof: String,
    pub trajectory: Trajectory,
    pub std: Vec<f64>,
}

/// Block-diagonal observation matrix at phase `phi`: one row per observed
/// DOF whose mask entry is set, holding that DOF's basis activations in its
/// own column block.
pub fn build_observation_matrix(model: &PipModel, phi: f64, mask: &[bool]) -> DMatrix<f64> {
    let offsets = model.block_offsets();
    let rows: Vec<usize> = (0..model.dof_count())
        .filter(|&d| model.dofs[d].role == DofRole::Observed && mask.get(d).copied().unwrap_or(false))
        .collect();
    let mut h = DMatrix::zeros(rows.len(), model.total_basis());
    for (r, &d) in rows.iter().enumerate() {
        let act = model.bases[d].eval(phi);
        for (k, v) in act.into_iter().enumerate() {
            h[(r, offsets[d] + k)] = v;
        }
    }
    h
}

/// Sequential estimator over one model. Engines never share belief state.
#[derive(Debug, Clone)]
pub struct Engine<'m> {
    model: &'m PipModel,
    offsets: Vec<usize>,
    observed: Vec<usize>,
    position_dof: usize,
    velocity_dof: usize,
    belief: BeliefState,
}

impl<'m> Engine<'m> {
    /// Starts from the model prior.
    pub fn new(model: &'m PipModel) -> Self {
        let observed = (0..model.dof_count())
            .filter(|&d| model.dofs[d].role == DofRole::Observed)
            .collect();
        Self {
            model,
            offsets: model.block_offsets(),
            observed,
            position_dof: model.phase_input_index(PhaseInput::Position),
            velocity_dof: model.phase_input_index(PhaseInput::Velocity),
            belief: prior_belief(model),
        }
    }

    pub fn model(&self) -> &'m PipModel {
        self.model
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    /// Restores the prior.
    pub fn reset(&mut self) {
        self.belief = prior_belief(self.model);
    }

    /// Manifold lookup on the frame's phase-input readings.
    pub fn estimate_phase(&self, frame: &ObservationFrame) -> Result<f64> {
        let slot = |d: usize| frame.values.get(d).copied().flatten();
        match (slot(self.position_dof), slot(self.velocity_dof)) {
            (Some(p), Some(v)) => self.model.manifold.lookup(p, v),
            _ => Err(Error::PhaseUnavailable),
        }
    }

    /// Estimates the phase of `frame` and conditions the belief on it.
    /// Returns the phase. On error the belief is unchanged.
    pub fn step(&mut self, frame: &ObservationFrame) -> Result<f64> {
        self.check_frame(frame)?;
        let phase = self.estimate_phase(frame)?;
        self.condition(phase, frame)?;
        Ok(phase)
    }

    fn check_frame(&self, frame: &ObservationFrame) -> Result<()> {
        if frame.values.len() != self.model.dof_count() {
            return Err(Error::invalid(format!(
                "frame has {} slots, model has {} DOFs",
                frame.values.len(),
                self.model.dof_count()
            )));
        }
        for &d in &self.observed {
            if let Some(v) = frame.values[d] {
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite observation for `{}`",
                        self.model.dofs[d].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Conditions the belief on the observed, present slots of `frame` at a
    /// known phase. Returns the number of rows used; zero rows is a no-op.
    pub fn condition(&mut self, phase: f64, frame: &ObservationFrame) -> Result<usize> {
        self.check_frame(frame)?;
        if !phase.is_finite() {
            return Err(Error::invalid("phase must be finite"));
        }
        let rows: Vec<(usize, f64)> = self
            .observed
            .iter()
            .filter_map(|&d| frame.values[d].map(|y| (d, y)))
            .collect();
        let m = rows.len();
        if m == 0 {
            return Ok(0);
        }
        let model = self.model;
        let belief = &self.belief;
        let b = belief.mean.len();

        let activations: Vec<DVector<f64>> = rows
            .iter()
            .map(|&(d, _)| DVector::from_vec(model.bases[d].eval(phase)))
            .collect();

        // Sigma H^T, exploiting the block structure of H
        let mut sht = DMatrix::<f64>::zeros(b, m);
        for (r, (&(d, _), act)) in rows.iter().zip(&activations).enumerate() {
            let block = belief.cov.columns(self.offsets[d], act.len());
            sht.set_column(r, &(block * act));
        }

        let mut innovation_cov = DMatrix::<f64>::zeros(m, m);
        let mut innovation = DVector::<f64>::zeros(m);
        for (r, (&(d, y), act)) in rows.iter().zip(&activations).enumerate() {
            let off = self.offsets[d];
            let len = act.len();
            for s in 0..m {
                innovation_cov[(r, s)] = act.dot(&sht.view((off, s), (len, 1)));
            }
            innovation_cov[(r, r)] += model.noise[d];
            innovation[r] = y - act.dot(&belief.mean.rows(off, len));
        }
        let innovation_cov = (&innovation_cov + innovation_cov.transpose()) * 0.5;
        let chol = innovation_cov
            .cholesky()
            .ok_or_else(|| Error::Numeric("innovation covariance is not positive definite".into()))?;

        let mean = &belief.mean + &sht * chol.solve(&innovation);
        // Sigma - K H Sigma with K H Sigma = (Sigma H^T) S^-1 (Sigma H^T)^T
        let gain_t = chol.solve(&sht.transpose());
        let mut cov = belief.cov.clone();
        cov.gemm(-1.0, &sht, &gain_t, 1.0);
        symmetrize(&mut cov);

        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("update produced non-finite belief".into()));
        }
        self.belief.mean = mean;
        self.belief.cov = cov;
        self.belief.step_count += 1;
        Ok(m)
    }

    /// Mean and standard deviation of DOF `dof` at one phase.
    pub fn predict_at(&self, dof: usize, phase: f64) -> (f64, f64) {
        let basis = &self.model.bases[dof];
        let off = self.offsets[dof];
        let n = basis.count();
        let act = DVector::from_vec(basis.eval(phase));
        let mean = act.dot(&self.belief.mean.rows(off, n));
        let block = self.belief.cov.view((off, off), (n, n));
        let var = act.dot(&(block * &act));
        (mean, var.max(0.0).sqrt())
    }

    /// Reconstructs DOF `dof` at `samples` evenly spaced phases from the
    /// current belief.
    pub fn predict(&self, dof: &str, samples: usize) -> Result<PredictionBand> {
        let d = self
            .model
            .dof_index(dof)
            .ok_or_else(|| Error::invalid(format!("unknown DOF `{dof}`")))?;
        if samples == 0 {
            return Err(Error::invalid("prediction needs at least one sample"));
        }
        let phases = sample_phases(samples);
        let (values, std) = phases.iter().map(|&phi| self.predict_at(d, phi)).unzip();
        Ok(PredictionBand {
            dof: dof.to_string(),
            trajectory: Trajectory { phases, values },
            std,
        })
    }
}

fn prior_belief(model: &PipModel) -> BeliefState {
    BeliefState {
        mean: model.prior_mean.clone(),
        cov: model.prior_cov.clone(),
        step_count: 0,
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// DTW-based phase estimator used as a comparison baseline.
///
/// The reference is two consecutive cycles of the prior-mean reconstruction
/// of the phase-input DOFs; the observation history is aligned to its
/// best-matching stretch and the phase at the last history frame is returned.
#[derive(Debug, Clone)]
pub struct DtwPhaseBaseline {
    reference: FeatureSeries,
    phases: Vec<f64>,
    scale: FeatureScale,
}

impl DtwPhaseBaseline {
    /// Reference sampled at `samples_per_cycle` phases per cycle.
    pub fn new(model: &PipModel, samples_per_cycle: usize) -> Result<Self> {
        if samples_per_cycle < 2 {
            return Err(Error::invalid("baseline reference needs at least 2 samples per cycle"));
        }
        let offsets = model.block_offsets();
        let pos = model.phase_input_index(PhaseInput::Position);
        let vel = model.phase_input_index(PhaseInput::Velocity);
        let one = sample_phases(samples_per_cycle);
        let phases: Vec<f64> = one.iter().chain(one.iter()).copied().collect();
        let eval = |d: usize| -> Vec<f64> {
            let w = model.prior_mean.rows(offsets[d], model.bases[d].count());
            phases
                .iter()
                .map(|&phi| model.bases[d].combine(phi, w.as_slice()))
                .collect()
        };
        let n = phases.len();
        let reference = FeatureSeries::new(eval(pos), eval(vel), vec![0.0; n])?;
        let scale = FeatureScale::from_pool([&reference]);
        Ok(Self {
            reference,
            phases,
            scale,
        })
    }

    pub fn reference_phases(&self) -> &[f64] {
        &self.phases
    }

    /// Phase of the last `(position, velocity)` pair in `history`.
    pub fn estimate(&self, history: &[(f64, f64)]) -> Result<f64> {
        if history.len() < 2 {
            return Err(Error::invalid("DTW phase baseline needs at least 2 history frames"));
        }
        let (pos, vel): (Vec<f64>, Vec<f64>) = history.iter().copied().unzip();
        let query = FeatureSeries::new(pos, vel, vec![0.0; history.len()])?;
        let (_, end) = subsequence_dtw_end(&query, &self.reference, &self.scale)?;
        Ok(wrap_phase(self.phases[end]))
    }
}

/// One-shot convenience wrapper around [`DtwPhaseBaseline`] with a
/// 100-sample-per-cycle reference.
pub fn dtw_phase_baseline(model: &PipModel, history: &[(f64, f64)]) -> Result<f64> {
    DtwPhaseBaseline::new(model, 100)?.estimate(history)
}

/// Shortest distance between two phases on the circle.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PHASE_PERIOD);
    d.min(PHASE_PERIOD - d)
}
