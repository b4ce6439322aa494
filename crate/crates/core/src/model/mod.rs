//! The trained artifact: per-DOF bases, prior over concatenated weights,
//! measurement noise and the phase manifold.

mod dataset;
mod io;
mod train;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::manifold::PhaseManifold;

pub use dataset::{validate_dofs, Dataset, Demonstration, DofRole, DofSpec, PhaseInput};
pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use train::{estimate_noise, train, TrainConfig, TrainSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct PipModel {
    pub dofs: Vec<DofSpec>,
    pub bases: Vec<BasisSet>,
    /// Prior mean over the concatenated weight vector (length `B`).
    pub prior_mean: DVector<f64>,
    /// Prior covariance, `B x B`.
    pub prior_cov: DMatrix<f64>,
    /// Per-DOF measurement variance.
    pub noise: Vec<f64>,
    pub manifold: PhaseManifold,
}

impl PipModel {
    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    /// Total basis count `B`.
    pub fn total_basis(&self) -> usize {
        self.bases.iter().map(BasisSet::count).sum()
    }

    /// Start offset of every DOF's block in the concatenated weight vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        self.bases
            .iter()
            .scan(0, |acc, b| {
                let start = *acc;
                *acc += b.count();
                Some(start)
            })
            .collect()
    }

    pub fn dof_index(&self, name: &str) -> Option<usize> {
        self.dofs.iter().position(|d| d.name == name)
    }

    pub fn phase_input_index(&self, input: PhaseInput) -> usize {
        self.dofs
            .iter()
            .position(|d| d.phase_input == Some(input))
            .expect("validated model has both phase inputs")
    }

    /// Checks every structural and numeric invariant of the model.
    pub fn validate(&self) -> Result<()> {
        validate_dofs(&self.dofs)?;
        let d = self.dofs.len();
        if self.bases.len() != d {
            return Err(Error::invalid(format!("{} bases for {d} DOFs", self.bases.len())));
        }
        if self.noise.len() != d {
            return Err(Error::invalid(format!("{} noise entries for {d} DOFs", self.noise.len())));
        }
        let b = self.total_basis();
        if self.prior_mean.len() != b {
            return Err(Error::invalid(format!(
                "prior_mean has length {}, expected {b}",
                self.prior_mean.len()
            )));
        }
        if self.prior_cov.shape() != (b, b) {
            return Err(Error::invalid(format!(
                "prior_cov is {:?}, expected ({b}, {b})",
                self.prior_cov.shape()
            )));
        }
        if self.prior_mean.iter().chain(self.prior_cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("prior contains non-finite values"));
        }
        if self.prior_cov != self.prior_cov.transpose() {
            return Err(Error::invalid("prior_cov is not symmetric"));
        }
        if !is_psd(&self.prior_cov, 1e-9) {
            return Err(Error::invalid("prior_cov is not positive semidefinite"));
        }
        for (spec, &r) in self.dofs.iter().zip(&self.noise) {
            if !r.is_finite() || r < 0.0 || (spec.role == DofRole::Observed && r <= 0.0) {
                return Err(Error::invalid(format!(
                    "noise variance of `{}` must be positive, got {r}",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}

/// Symmetric PSD check: the smallest eigenvalue is at least
/// `-rel_tol * trace`. Implemented as a Cholesky attempt on the shifted
/// matrix.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    if n == 0 {
        return true;
    }
    let trace = m.trace();
    if !trace.is_finite() || trace < 0.0 {
        return false;
    }
    let shift = (rel_tol * trace).max(f64::MIN_POSITIVE);
    let shifted = m + DMatrix::identity(n, n) * shift;
    shifted.cholesky().is_some()
}
