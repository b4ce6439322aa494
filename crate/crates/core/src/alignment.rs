//! Dynamic time warping over (position, velocity, acceleration) features and
//! phase labelling of demonstration cycles.

use crate::basis::{BasisSet, WeightVector, PHASE_PERIOD};
use crate::error::{Error, Result};

/// Angular position, velocity and (derived) acceleration of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    position: Vec<f64>,
    velocity: Vec<f64>,
    acceleration: Vec<f64>,
}

impl FeatureSeries {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>, acceleration: Vec<f64>) -> Result<Self> {
        let n = position.len();
        if velocity.len() != n || acceleration.len() != n {
            return Err(Error::invalid(format!(
                "feature lengths differ: position {}, velocity {}, acceleration {}",
                n,
                velocity.len(),
                acceleration.len()
            )));
        }
        if n < 2 {
            return Err(Error::invalid("feature series needs at least 2 samples"));
        }
        let finite = position
            .iter()
            .chain(&velocity)
            .chain(&acceleration)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("feature series contains non-finite values"));
        }
        Ok(Self {
            position,
            velocity,
            acceleration,
        })
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    #[inline]
    pub fn sample(&self, i: usize) -> [f64; 3] {
        [self.position[i], self.velocity[i], self.acceleration[i]]
    }

    pub fn position(&self) -> &[f64] {
        &self.position
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn acceleration(&self) -> &[f64] {
        &self.acceleration
    }
}

/// Per-feature normalization applied inside [`feature_cost`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScale {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl FeatureScale {
    pub const UNIT: FeatureScale = FeatureScale {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    /// z-score statistics over every sample of the pool. Features with zero
    /// spread keep a unit scale.
    pub fn from_pool<'a>(pool: impl IntoIterator<Item = &'a FeatureSeries>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let series: Vec<&FeatureSeries> = pool.into_iter().collect();
        for s in &series {
            for i in 0..s.len() {
                let x = s.sample(i);
                for k in 0..3 {
                    sum[k] += x[k];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::UNIT;
        }
        let mean = sum.map(|v| v / n as f64);
        for s in &series {
            for i in 0..s.len() {
                let x = s.sample(i);
                for k in 0..3 {
                    sq[k] += (x[k] - mean[k]).powi(2);
                }
            }
        }
        let std = sq.map(|v| {
            let sd = (v / n as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        });
        Self { mean, std }
    }
}

/// Sum of per-feature absolute differences after normalization.
#[inline]
pub fn feature_cost(a: [f64; 3], b: [f64; 3], scale: &FeatureScale) -> f64 {
    (a[0] - b[0]).abs() / scale.std[0]
        + (a[1] - b[1]).abs() / scale.std[1]
        + (a[2] - b[2]).abs() / scale.std[2]
}

/// Monotone index pairing between two series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpPath(pub Vec<(usize, usize)>);

impl WarpPath {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Starts at `(0,0)`, ends at `(len_u-1, len_v-1)`, and every step
    /// advances one or both indices by exactly one.
    pub fn is_valid(&self, len_u: usize, len_v: usize) -> bool {
        let p = &self.0;
        if p.first() != Some(&(0, 0)) || p.last() != Some(&(len_u - 1, len_v - 1)) {
            return false;
        }
        p.windows(2).all(|w| {
            let (di, dj) = (w[1].0 as isize - w[0].0 as isize, w[1].1 as isize - w[0].1 as isize);
            matches!((di, dj), (1, 1) | (1, 0) | (0, 1))
        })
    }
}

/// Options for [`dtw_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DtwOptions {
    /// Sakoe-Chiba band half-width around the (rescaled) diagonal.
    pub band: Option<usize>,
}

/// Result of a DTW run.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub cost: f64,
    pub path: WarpPath,
}

/// Unconstrained DTW with the three-step pattern.
pub fn dtw(u: &FeatureSeries, v: &FeatureSeries, scale: &FeatureScale) -> Result<Alignment> {
    dtw_with(u, v, scale, DtwOptions::default())
}

pub fn dtw_with(
    u: &FeatureSeries,
    v: &FeatureSeries,
    scale: &FeatureScale,
    opts: DtwOptions,
) -> Result<Alignment> {
    let (n, m) = (u.len(), v.len());
    if n < 2 || m < 2 {
        return Err(Error::invalid("DTW needs series of at least 2 samples"));
    }
    let ratio = (m - 1) as f64 / (n - 1) as f64;
    let inside = |i: usize, j: usize| match opts.band {
        None => true,
        Some(w) => ((i as f64 * ratio) - j as f64).abs() <= w as f64 + 0.5,
    };

    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        let ui = u.sample(i);
        for j in 0..m {
            if !inside(i, j) {
                continue;
            }
            let c = feature_cost(ui, v.sample(j), scale);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = c + best;
        }
    }
    let cost = acc[n * m - 1];
    if !cost.is_finite() {
        return Err(Error::invalid("DTW band too narrow: no admissible path"));
    }

    // Backtrack; ties prefer the diagonal, then the step that advanced u.
    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment {
        cost,
        path: WarpPath(path),
    })
}

/// Open-begin, open-end DTW: aligns the whole `query` to the best-matching
/// contiguous stretch of `reference`. Returns the accumulated cost and the
/// reference index matched to the last query sample (lowest index on ties).
pub fn subsequence_dtw_end(
    query: &FeatureSeries,
    reference: &FeatureSeries,
    scale: &FeatureScale,
) -> Result<(f64, usize)> {
    let (n, m) = (query.len(), reference.len());
    if n < 2 || m < 2 {
        return Err(Error::invalid("DTW needs series of at least 2 samples"));
    }
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    let q0 = query.sample(0);
    for (j, p) in prev.iter_mut().enumerate() {
        *p = feature_cost(q0, reference.sample(j), scale);
    }
    for i in 1..n {
        let qi = query.sample(i);
        cur[0] = prev[0] + feature_cost(qi, reference.sample(0), scale);
        for j in 1..m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = best + feature_cost(qi, reference.sample(j), scale);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (end, cost) = prev
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bj, bc), (j, &c)| if c < bc { (j, c) } else { (bj, bc) });
    Ok((cost, end))
}

/// Phase-derivative of the velocity reconstruction, used as the acceleration
/// feature: entry `t` is `dpsi(phi_t) . w`.
pub fn compute_acceleration(basis: &BasisSet, weights: &WeightVector, phases: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; basis.count()];
    phases
        .iter()
        .map(|&phi| {
            basis.eval_derivative_into(phi, &mut d);
            d.iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Phase labels produced by [`align_demonstrations`].
#[derive(Debug, Clone)]
pub struct AlignedPhases {
    /// Index of the reference (medoid) demonstration.
    pub medoid: usize,
    /// One label vector per demonstration, each in `[0, 100]`.
    pub labels: Vec<Vec<f64>>,
    pub scale: FeatureScale,
}

/// Linear phase ramp `0..=100` over `len` samples.
pub fn linear_phase(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![0.0];
    }
    let last = (len - 1) as f64;
    (0..len).map(|i| i as f64 * PHASE_PERIOD / last).collect()
}

/// Labels every demonstration with phases in `[0, 100]`.
///
/// The medoid (lowest summed DTW cost to all others, lowest index on ties)
/// gets a linear ramp; every other demonstration inherits the medoid's labels
/// through its warp path, averaging where one sample maps to several medoid
/// samples.
pub fn align_demonstrations(demos: &[FeatureSeries], opts: DtwOptions) -> Result<AlignedPhases> {
    if demos.is_empty() {
        return Err(Error::invalid("no demonstrations to align"));
    }
    let scale = FeatureScale::from_pool(demos);
    let n = demos.len();

    let mut paths: Vec<Vec<Option<WarpPath>>> = vec![vec![None; n]; n];
    let mut totals = vec![0.0; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let al = dtw_with(&demos[a], &demos[b], &scale, opts)?;
            totals[a] += al.cost;
            totals[b] += al.cost;
            paths[a][b] = Some(al.path);
        }
    }
    let medoid = totals
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bc), (i, &c)| if c < bc { (i, c) } else { (bi, bc) })
        .0;
    let reference = linear_phase(demos[medoid].len());

    let labels = (0..n)
        .map(|d| {
            if d == medoid {
                return reference.clone();
            }
            // express each path as (demo index, medoid index)
            let pairs: Vec<(usize, usize)> = if d < medoid {
                paths[d][medoid].as_ref().unwrap().0.clone()
            } else {
                paths[medoid][d]
                    .as_ref()
                    .unwrap()
                    .0
                    .iter()
                    .map(|&(i, j)| (j, i))
                    .collect()
            };
            transport_labels(&pairs, demos[d].len(), &reference)
        })
        .collect();

    Ok(AlignedPhases {
        medoid,
        labels,
        scale,
    })
}

fn transport_labels(pairs: &[(usize, usize)], len: usize, reference: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; len];
    let mut count = vec![0usize; len];
    for &(i, j) in pairs {
        sum[i] += reference[j];
        count[i] += 1;
    }
    let mut out: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    out[0] = 0.0;
    out[len - 1] = PHASE_PERIOD;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(pos: &[f64]) -> FeatureSeries {
        let n = pos.len();
        let vel: Vec<f64> = (0..n).map(|i| pos[(i + 1) % n] - pos[i]).collect();
        let acc: Vec<f64> = (0..n).map(|i| vel[(i + 1) % n] - vel[i]).collect();
        FeatureSeries::new(pos.to_vec(), vel, acc).unwrap()
    }

    #[test]
    fn cost_basics() {
        let s = FeatureScale::UNIT;
        assert_eq!(feature_cost([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], &s), 0.0);
        assert_eq!(feature_cost([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], &s), 1.0);
        let a = [0.3, -1.2, 5.0];
        let b = [2.0, 0.7, -3.0];
        assert_eq!(feature_cost(a, b, &s), feature_cost(b, a, &s));
    }

    #[test]
    fn identical_series_give_diagonal() {
        let u = series(&[0.0, 1.0, 3.0, 2.0, -1.0]);
        let al = dtw(&u, &u, &FeatureScale::UNIT).unwrap();
        assert_eq!(al.cost, 0.0);
        assert_eq!(al.path.0, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn short_series_rejected() {
        let u = series(&[0.0, 1.0, 2.0]);
        let one = FeatureSeries::new(vec![0.0], vec![0.0], vec![0.0]);
        assert!(one.is_err());
        assert!(FeatureSeries::new(vec![0.0, 1.0], vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(dtw(&u, &u, &FeatureScale::UNIT).is_ok());
    }

    #[test]
    fn duplicated_sample_costs_nothing() {
        let pos = [0.0, 1.0, 4.0, 9.0, 16.0, 25.0];
        let u = FeatureSeries::new(pos.to_vec(), vec![0.0; 6], vec![0.0; 6]).unwrap();
        let mut dup = pos.to_vec();
        dup.insert(3, 9.0);
        let v = FeatureSeries::new(dup, vec![0.0; 7], vec![0.0; 7]).unwrap();
        let al = dtw(&u, &v, &FeatureScale::UNIT).unwrap();
        assert_eq!(al.cost, 0.0);
        assert!(al.path.is_valid(6, 7));
        let non_diag = al
            .path
            .0
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count();
        assert_eq!(non_diag, 1);
    }

    #[test]
    fn band_constrains_path() {
        let u = series(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let v = series(&[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 7.0]);
        let free = dtw(&u, &v, &FeatureScale::UNIT).unwrap();
        let banded = dtw_with(&u, &v, &FeatureScale::UNIT, DtwOptions { band: Some(1) }).unwrap();
        assert!(banded.cost >= free.cost);
        assert!(banded.path.is_valid(8, 8));
        assert!(banded.path.0.iter().all(|&(i, j)| (i as isize - j as isize).abs() <= 1));
    }

    #[test]
    fn acceleration_of_zero_weights() {
        let basis = BasisSet::new(6, 3.0).unwrap();
        let acc = compute_acceleration(&basis, &WeightVector::zeros(6), &[0.0, 10.0, 55.0]);
        assert_eq!(acc, vec![0.0; 3]);
        let mut bump = WeightVector::zeros(6);
        bump.0[2] = 1.0;
        let center = basis.centers()[2];
        assert_eq!(compute_acceleration(&basis, &bump, &[center])[0], 0.0);
    }

    #[test]
    fn align_single_and_identical() {
        assert!(align_demonstrations(&[], DtwOptions::default()).is_err());
        let u = series(&[0.0, 2.0, 5.0, 3.0, 1.0]);
        let one = align_demonstrations(std::slice::from_ref(&u), DtwOptions::default()).unwrap();
        assert_eq!(one.labels[0], vec![0.0, 25.0, 50.0, 75.0, 100.0]);
        let two = align_demonstrations(&[u.clone(), u], DtwOptions::default()).unwrap();
        assert_eq!(two.labels[0], two.labels[1]);
        assert_eq!(two.medoid, 0);
    }
}
