//! E x F lookup table from (angular position, angular velocity) to phase.

use crate::basis::wrap_phase;
use crate::error::{Error, Result};

pub const DEFAULT_POSITION_BINS: usize = 50;
pub const DEFAULT_VELOCITY_BINS: usize = 50;

/// Fractional margin added on each side of the observed sample range.
const RANGE_MARGIN: f64 = 0.05;

/// Closed interval `[lo, hi]` with `hi > lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn covering(values: impl Iterator<Item = f64>) -> Self {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let width = hi - lo;
        let margin = if width > 0.0 {
            RANGE_MARGIN * width
        } else {
            (RANGE_MARGIN * lo.abs()).max(0.5)
        };
        Range {
            lo: lo - margin,
            hi: hi + margin,
        }
    }

    #[inline]
    fn normalize(&self, x: f64) -> f64 {
        (x - self.lo) / self.width()
    }

    #[inline]
    fn bin(&self, x: f64, bins: usize) -> usize {
        let t = self.normalize(x.clamp(self.lo, self.hi));
        ((t * bins as f64) as usize).min(bins - 1)
    }
}

/// A training point for the manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSample {
    pub position: f64,
    pub velocity: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseManifold {
    position_bins: usize,
    velocity_bins: usize,
    position_range: Range,
    velocity_range: Range,
    /// Row-major, `position_bins x velocity_bins`.
    table: Vec<f64>,
    occupancy: Vec<bool>,
}

impl PhaseManifold {
    /// Builds the table by nearest-neighbour assignment of every cell center,
    /// with distances measured in range-normalized coordinates.
    pub fn build(samples: &[PhaseSample], position_bins: usize, velocity_bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("phase manifold needs at least one sample"));
        }
        if position_bins < 2 || velocity_bins < 2 {
            return Err(Error::invalid("phase manifold needs at least 2 bins per axis"));
        }
        if samples
            .iter()
            .any(|s| !(s.position.is_finite() && s.velocity.is_finite() && s.phase.is_finite()))
        {
            return Err(Error::invalid("phase manifold samples must be finite"));
        }
        let position_range = Range::covering(samples.iter().map(|s| s.position));
        let velocity_range = Range::covering(samples.iter().map(|s| s.velocity));

        let points: Vec<(f64, f64, f64)> = samples
            .iter()
            .map(|s| {
                (
                    position_range.normalize(s.position),
                    velocity_range.normalize(s.velocity),
                    wrap_phase(s.phase),
                )
            })
            .collect();

        let cells = position_bins * velocity_bins;
        let mut table = vec![0.0; cells];
        let mut occupancy = vec![false; cells];
        for s in samples {
            let e = position_range.bin(s.position, position_bins);
            let f = velocity_range.bin(s.velocity, velocity_bins);
            occupancy[e * velocity_bins + f] = true;
        }
        for e in 0..position_bins {
            let cx = (e as f64 + 0.5) / position_bins as f64;
            for f in 0..velocity_bins {
                let cy = (f as f64 + 0.5) / velocity_bins as f64;
                let mut best = f64::INFINITY;
                let mut phase = 0.0;
                for &(x, y, p) in &points {
                    let d = (x - cx).powi(2) + (y - cy).powi(2);
                    if d < best {
                        best = d;
                        phase = p;
                    }
                }
                table[e * velocity_bins + f] = phase;
            }
        }
        Ok(Self {
            position_bins,
            velocity_bins,
            position_range,
            velocity_range,
            table,
            occupancy,
        })
    }

    /// Reassembles a manifold from stored parts, checking every invariant.
    pub fn from_parts(
        position_bins: usize,
        velocity_bins: usize,
        position_range: Range,
        velocity_range: Range,
        table: Vec<f64>,
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        if position_bins < 2 || velocity_bins < 2 {
            return Err(Error::invalid("manifold needs at least 2 bins per axis"));
        }
        let cells = position_bins * velocity_bins;
        if table.len() != cells || occupancy.len() != cells {
            return Err(Error::invalid(format!(
                "manifold table has {} cells, occupancy {}, expected {cells}",
                table.len(),
                occupancy.len()
            )));
        }
        for r in [position_range, velocity_range] {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.width() > 0.0) {
                return Err(Error::invalid("manifold range must be finite with positive width"));
            }
        }
        if table.iter().any(|p| !(p.is_finite() && (0.0..100.0).contains(p))) {
            return Err(Error::invalid("manifold table phases must lie in [0, 100)"));
        }
        if !occupancy.iter().any(|&o| o) {
            return Err(Error::invalid("manifold has no occupied cell"));
        }
        Ok(Self {
            position_bins,
            velocity_bins,
            position_range,
            velocity_range,
            table,
            occupancy,
        })
    }

    /// Phase of the cell containing `(position, velocity)`; out-of-range
    /// inputs are clamped to the boundary cells.
    pub fn lookup(&self, position: f64, velocity: f64) -> Result<f64> {
        if !(position.is_finite() && velocity.is_finite()) {
            return Err(Error::invalid("phase lookup inputs must be finite"));
        }
        Ok(self.lookup_unchecked(position, velocity))
    }

    #[inline]
    pub fn lookup_unchecked(&self, position: f64, velocity: f64) -> f64 {
        let e = self.position_range.bin(position, self.position_bins);
        let f = self.velocity_range.bin(velocity, self.velocity_bins);
        self.table[e * self.velocity_bins + f]
    }

    pub fn position_bins(&self) -> usize {
        self.position_bins
    }

    pub fn velocity_bins(&self) -> usize {
        self.velocity_bins
    }

    pub fn position_range(&self) -> Range {
        self.position_range
    }

    pub fn velocity_range(&self) -> Range {
        self.velocity_range
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn cell(&self, e: usize, f: usize) -> f64 {
        self.table[e * self.velocity_bins + f]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_fills_every_cell() {
        let m = PhaseManifold::build(
            &[PhaseSample {
                position: 3.0,
                velocity: -1.0,
                phase: 42.0,
            }],
            5,
            7,
        )
        .unwrap();
        assert!(m.table().iter().all(|&p| p == 42.0));
        assert_eq!(m.occupancy().iter().filter(|&&o| o).count(), 1);
        assert!(m.position_range().width() > 0.0);
        assert!(m.velocity_range().width() > 0.0);
    }

    #[test]
    fn two_point_voronoi() {
        let samples = [
            PhaseSample { position: 0.0, velocity: 0.0, phase: 0.0 },
            PhaseSample { position: 1.0, velocity: 1.0, phase: 50.0 },
        ];
        let m = PhaseManifold::build(&samples, 2, 2).unwrap();
        assert_eq!(m.cell(0, 0), 0.0);
        assert_eq!(m.cell(1, 1), 50.0);
        // off-diagonal cells are (up to rounding) equidistant
        assert!([0.0, 50.0].contains(&m.cell(0, 1)));
        assert!([0.0, 50.0].contains(&m.cell(1, 0)));
    }

    #[test]
    fn errors_and_clamping() {
        assert!(PhaseManifold::build(&[], 10, 10).is_err());
        let s = [PhaseSample { position: 0.0, velocity: 0.0, phase: 1.0 }];
        assert!(PhaseManifold::build(&s, 1, 10).is_err());

        let samples: Vec<PhaseSample> = (0..100)
            .map(|i| {
                let t = i as f64 / 100.0 * std::f64::consts::TAU;
                PhaseSample { position: t.cos(), velocity: t.sin(), phase: i as f64 }
            })
            .collect();
        let m = PhaseManifold::build(&samples, 20, 20).unwrap();
        assert!(m.lookup(f64::NAN, 0.0).is_err());
        assert!(m.lookup(0.0, f64::INFINITY).is_err());
        assert_eq!(m.lookup(1e9, -1e9).unwrap(), m.lookup(m.position_range().hi, m.velocity_range().lo).unwrap());
        for s in &samples {
            let p = m.lookup(s.position, s.velocity).unwrap();
            assert!((0.0..100.0).contains(&p));
        }
    }

    #[test]
    fn phase_hundred_wraps_to_zero() {
        let s = [PhaseSample { position: 0.0, velocity: 0.0, phase: 100.0 }];
        let m = PhaseManifold::build(&s, 3, 3).unwrap();
        assert!(m.table().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn from_parts_validates() {
        let r = Range { lo: 0.0, hi: 1.0 };
        assert!(PhaseManifold::from_parts(2, 2, r, r, vec![0.0; 4], vec![true; 4]).is_ok());
        assert!(PhaseManifold::from_parts(2, 2, r, r, vec![0.0; 3], vec![true; 4]).is_err());
        assert!(PhaseManifold::from_parts(2, 2, r, r, vec![100.0; 4], vec![true; 4]).is_err());
        assert!(PhaseManifold::from_parts(2, 2, r, r, vec![0.0; 4], vec![false; 4]).is_err());
        let bad = Range { lo: 1.0, hi: 1.0 };
        assert!(PhaseManifold::from_parts(2, 2, bad, r, vec![0.0; 4], vec![true; 4]).is_err());
    }
}
