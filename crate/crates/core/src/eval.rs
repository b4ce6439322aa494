//! Holdout evaluation: streaming conditioning over held-out cycles, MAE per
//! DOF, latency statistics, sensor-dropout sweep and a DTW phase baseline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{phase_distance, DtwPhaseBaseline, Engine, ObservationFrame};
use crate::model::{Dataset, DofRole, PhaseInput, PipModel};

/// Samples per cycle in the trajectory emitted with every timed step.
pub const TIMED_PREDICT_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub dropout_sweep: bool,
    pub baseline: bool,
    /// History length fed to the DTW baseline.
    pub baseline_window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            dropout_sweep: false,
            baseline: false,
            baseline_window: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    /// Sensor channels, scored on the remaining span of the cycle.
    Predicted,
    /// Latent and controlled channels, scored at the current phase.
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofScore {
    pub name: String,
    pub role: DofRole,
    pub unit: String,
    pub section: Section,
    pub mae: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub steps: usize,
    /// `step()` plus one `predict()` of a full trajectory, microseconds.
    pub mean_step_us: f64,
    pub p99_step_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutPoint {
    pub masked_count: usize,
    pub masked: Vec<String>,
    /// Current-phase MAE per DOF in native units, model order.
    pub dof_mae: Vec<f64>,
    /// Mean over latent and controlled DOFs of MAE divided by the DOF's
    /// peak-to-peak range in the evaluated data.
    pub inferred_mae: f64,
    /// The same ratio averaged over observed DOFs.
    pub observed_mae: f64,
    pub all_finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub window: usize,
    pub frames: usize,
    pub median_phase_difference: f64,
    pub lookup_mean_us: f64,
    pub dtw_mean_us: f64,
    pub speed_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cycles: usize,
    pub dofs: Vec<DofScore>,
    pub timing: TimingStats,
    #[serde(default)]
    pub dropout: Vec<DropoutPoint>,
    #[serde(default)]
    pub baseline: Option<BaselineComparison>,
}

impl EvalReport {
    pub fn score(&self, name: &str) -> Option<&DofScore> {
        self.dofs.iter().find(|d| d.name == name)
    }
}

/// Order in which the dropout sweep removes sensors: non-phase sensors from
/// the last to the first, then the phase velocity, then the phase position.
pub fn dropout_order(model: &PipModel) -> Vec<usize> {
    let pos = model.phase_input_index(PhaseInput::Position);
    let vel = model.phase_input_index(PhaseInput::Velocity);
    let mut order: Vec<usize> = (0..model.dof_count())
        .rev()
        .filter(|&d| model.dofs[d].role == DofRole::Observed && d != pos && d != vel)
        .collect();
    order.push(vel);
    order.push(pos);
    order
}

fn check_compatible(model: &PipModel, dataset: &Dataset) -> Result<()> {
    let same = model.dofs.len() == dataset.dofs().len()
        && model
            .dofs
            .iter()
            .zip(dataset.dofs())
            .all(|(a, b)| a.name == b.name && a.role == b.role);
    if same {
        Ok(())
    } else {
        Err(Error::Data("dataset DOFs do not match the model's DOFs".into()))
    }
}

#[derive(Default, Clone)]
struct Accum {
    sum: f64,
    n: usize,
}

impl Accum {
    fn add(&mut self, err: f64) {
        self.sum += err;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Conditions on each cycle of `dataset` frame by frame, starting every
/// cycle from the prior.
///
/// Observed DOFs are scored on the remaining span of the cycle: after frame
/// `t`, each later sample `s` is predicted at the phase the manifold assigns
/// to it. Latent and controlled DOFs are scored at the current phase after
/// each frame.
pub fn evaluate(model: &PipModel, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    check_compatible(model, dataset)?;
    if dataset.cycles().is_empty() {
        return Err(Error::Data("dataset has no cycles to evaluate".into()));
    }
    let n_dofs = model.dof_count();
    let observed: Vec<usize> = (0..n_dofs).filter(|&d| model.dofs[d].role == DofRole::Observed).collect();
    let inferred: Vec<usize> = (0..n_dofs).filter(|&d| model.dofs[d].role != DofRole::Observed).collect();
    let pos = model.phase_input_index(PhaseInput::Position);
    let vel = model.phase_input_index(PhaseInput::Velocity);
    let timed_dof = inferred.first().copied().unwrap_or(0);
    let timed_name = model.dofs[timed_dof].name.clone();

    let mut acc = vec![Accum::default(); n_dofs];
    let mut latencies = Vec::new();
    let mut engine = Engine::new(model);
    for cycle in dataset.cycles() {
        engine.reset();
        let lookups: Vec<f64> = (0..cycle.len())
            .map(|t| model.manifold.lookup(cycle.columns[pos][t], cycle.columns[vel][t]))
            .collect::<Result<_>>()?;
        for t in 0..cycle.len() {
            let frame = ObservationFrame::from_row(&cycle.row(t));
            let start = Instant::now();
            let phase = engine.step(&frame)?;
            let band = engine.predict(&timed_name, TIMED_PREDICT_SAMPLES)?;
            latencies.push(start.elapsed().as_secs_f64() * 1e6);
            std::hint::black_box(band);

            for &d in &inferred {
                let (mean, _) = engine.predict_at(d, phase);
                acc[d].add((mean - cycle.columns[d][t]).abs());
            }
            for s in (t + 1)..cycle.len() {
                for &d in &observed {
                    let (mean, _) = engine.predict_at(d, lookups[s]);
                    acc[d].add((mean - cycle.columns[d][s]).abs());
                }
            }
        }
    }

    let dofs = model
        .dofs
        .iter()
        .enumerate()
        .map(|(d, spec)| DofScore {
            name: spec.name.clone(),
            role: spec.role,
            unit: spec.unit.clone(),
            section: if spec.role == DofRole::Observed {
                Section::Predicted
            } else {
                Section::Inferred
            },
            mae: acc[d].mean(),
            samples: acc[d].n,
        })
        .collect();

    let timing = timing_stats(&mut latencies);
    let dropout = if opts.dropout_sweep {
        dropout_sweep(model, dataset)?
    } else {
        Vec::new()
    };
    let baseline = if opts.baseline {
        Some(compare_baseline(model, dataset, opts.baseline_window)?)
    } else {
        None
    };
    Ok(EvalReport {
        cycles: dataset.cycles().len(),
        dofs,
        timing,
        dropout,
        baseline,
    })
}

fn timing_stats(latencies: &mut [f64]) -> TimingStats {
    latencies.sort_by(f64::total_cmp);
    let n = latencies.len();
    let mean = latencies.iter().sum::<f64>() / n.max(1) as f64;
    let p99 = if n == 0 {
        0.0
    } else {
        latencies[((n as f64 * 0.99).ceil() as usize).clamp(1, n) - 1]
    };
    TimingStats {
        steps: n,
        mean_step_us: mean,
        p99_step_us: p99,
    }
}

/// Masks `k = 0..D_s-1` sensors (see [`dropout_order`]) from conditioning.
/// The phase is still read from the phase-input pair so that every sweep
/// point is scored at the same phases; only the belief update loses the
/// masked channels.
pub fn dropout_sweep(model: &PipModel, dataset: &Dataset) -> Result<Vec<DropoutPoint>> {
    check_compatible(model, dataset)?;
    let order = dropout_order(model);
    let n_dofs = model.dof_count();
    let pos = model.phase_input_index(PhaseInput::Position);
    let vel = model.phase_input_index(PhaseInput::Velocity);
    let observed: Vec<usize> = (0..n_dofs).filter(|&d| model.dofs[d].role == DofRole::Observed).collect();
    let inferred: Vec<usize> = (0..n_dofs).filter(|&d| model.dofs[d].role != DofRole::Observed).collect();

    let ptp = dataset.peak_to_peak();
    let mut points = Vec::with_capacity(order.len());
    for k in 0..order.len() {
        let masked = &order[..k];
        let mut acc = vec![Accum::default(); n_dofs];
        let mut all_finite = true;
        let mut engine = Engine::new(model);
        for cycle in dataset.cycles() {
            engine.reset();
            for t in 0..cycle.len() {
                let row = cycle.row(t);
                let phase = model.manifold.lookup(row[pos], row[vel])?;
                let frame = ObservationFrame::from_row(&row).without(masked);
                engine.condition(phase, &frame)?;
                for (d, a) in acc.iter_mut().enumerate() {
                    let (mean, std) = engine.predict_at(d, phase);
                    all_finite &= mean.is_finite() && std.is_finite();
                    a.add((mean - row[d]).abs());
                }
            }
        }
        let dof_mae: Vec<f64> = acc.iter().map(Accum::mean).collect();
        let relative = |idx: &[usize]| {
            if idx.is_empty() {
                0.0
            } else {
                idx.iter().map(|&d| dof_mae[d] / ptp[d].max(f64::MIN_POSITIVE)).sum::<f64>() / idx.len() as f64
            }
        };
        points.push(DropoutPoint {
            masked_count: k,
            masked: masked.iter().map(|&d| model.dofs[d].name.clone()).collect(),
            inferred_mae: relative(&inferred),
            observed_mae: relative(&observed),
            dof_mae,
            all_finite,
        });
    }
    Ok(points)
}

/// Lookup-table phase versus DTW baseline phase on every frame with at least
/// two frames of history, plus per-call timing of both.
pub fn compare_baseline(model: &PipModel, dataset: &Dataset, window: usize) -> Result<BaselineComparison> {
    check_compatible(model, dataset)?;
    if window < 2 {
        return Err(Error::invalid("baseline window must be at least 2"));
    }
    let pos = model.phase_input_index(PhaseInput::Position);
    let vel = model.phase_input_index(PhaseInput::Velocity);
    let baseline = DtwPhaseBaseline::new(model, 100)?;

    let mut diffs = Vec::new();
    let mut dtw_time = 0.0;
    let mut queries: Vec<(f64, f64)> = Vec::new();
    for cycle in dataset.cycles() {
        let frames: Vec<(f64, f64)> = (0..cycle.len())
            .map(|t| (cycle.columns[pos][t], cycle.columns[vel][t]))
            .collect();
        for t in 1..frames.len() {
            let history = &frames[(t + 1).saturating_sub(window)..=t];
            let start = Instant::now();
            let dtw_phase = baseline.estimate(history)?;
            dtw_time += start.elapsed().as_secs_f64();
            let lookup = model.manifold.lookup(frames[t].0, frames[t].1)?;
            diffs.push(phase_distance(lookup, dtw_phase));
            queries.push(frames[t]);
        }
    }
    if queries.is_empty() {
        return Err(Error::Data("no frames with enough history for the baseline".into()));
    }

    // Lookups are too fast to time one by one; time repeated passes.
    let reps = 200;
    let start = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        for &(p, v) in &queries {
            sink += model.manifold.lookup(std::hint::black_box(p), std::hint::black_box(v))?;
        }
    }
    std::hint::black_box(sink);
    let lookup_mean = start.elapsed().as_secs_f64() / (reps * queries.len()) as f64;
    let dtw_mean = dtw_time / queries.len() as f64;

    diffs.sort_by(f64::total_cmp);
    let median = if diffs.len() % 2 == 1 {
        diffs[diffs.len() / 2]
    } else {
        0.5 * (diffs[diffs.len() / 2 - 1] + diffs[diffs.len() / 2])
    };
    Ok(BaselineComparison {
        window,
        frames: queries.len(),
        median_phase_difference: median,
        lookup_mean_us: lookup_mean * 1e6,
        dtw_mean_us: dtw_mean * 1e6,
        speed_ratio: dtw_mean / lookup_mean,
    })
}
