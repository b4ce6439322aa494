//! Synthetic periodic gait data with exact ground truth.
//!
//! Observed DOFs are truncated Fourier series in phase. Each cycle is sampled
//! in time under a random smooth monotone warp of the phase axis, with a
//! per-cycle amplitude scale per DOF. Latent and controlled DOFs may be
//! declared as phase-shifted linear combinations of the noiseless observed
//! signals, which gives them a known coupling to the sensors.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::{ALPHA, PHASE_PERIOD};
use crate::error::{Error, Result};
use crate::model::{validate_dofs, Dataset, Demonstration, DofRole, DofSpec, PhaseInput};

const MAX_HARMONIC_ORDER: usize = 4;
const WARP_TERMS: usize = 3;

/// Built-in 14-DOF gait configuration (8 sensors, 5 latent, 1 controlled).
pub const GAIT14_TOML: &str = include_str!("../../../configs/gait14.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub amplitude: f64,
    /// Phase offset in radians.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingTerm {
    pub source: String,
    pub weight: f64,
    /// Phase shift in phase units: the term is `weight * source(phi + shift)`.
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDof {
    pub name: String,
    pub role: DofRole,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub phase_input: Option<PhaseInput>,
    #[serde(default)]
    pub offset: f64,
    /// Harmonic `k` (1-based) is `amplitude * sin(k * alpha * phi + phase)`.
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
    /// Non-observed DOFs only: the clean signal is this combination of
    /// observed DOFs (plus `offset`) instead of the harmonics.
    #[serde(default)]
    pub coupling: Vec<CouplingTerm>,
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleDuration {
    pub mean: f64,
    /// Uniform jitter as a fraction of the mean, in `[0, 1)`.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cycles: usize,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub cycle_duration_s: CycleDuration,
    /// Strength of the monotone time warp, in `[0, 1)`.
    #[serde(default)]
    pub speed_warp: f64,
    /// Per-cycle, per-DOF amplitude factor drawn from `1 +- amplitude_variation`.
    #[serde(default)]
    pub amplitude_variation: f64,
    /// Per-cycle factor common to every DOF, drawn from
    /// `1 +- shared_amplitude_variation`. Multiplies the per-DOF factor.
    #[serde(default)]
    pub shared_amplitude_variation: f64,
    /// First emitted `cycle_id`.
    #[serde(default)]
    pub first_cycle_id: u64,
    pub dofs: Vec<SynthDof>,
}

/// Noiseless signals and true phases of one generated cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTruth {
    pub phases: Vec<f64>,
    /// `clean[d][t]`.
    pub clean: Vec<Vec<f64>>,
    /// Amplitude scale applied to every harmonic DOF this cycle.
    pub amplitude_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub truth: Vec<CycleTruth>,
}

impl SynthConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(s).map_err(|e| {
            let field = e
                .span()
                .map(|sp| format!("config offset {}", sp.start))
                .unwrap_or_else(|| "config".to_string());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The built-in 14-DOF gait configuration.
    pub fn gait14() -> Self {
        Self::from_toml_str(GAIT14_TOML).expect("built-in config is valid")
    }

    pub fn dof_specs(&self) -> Vec<DofSpec> {
        self.dofs
            .iter()
            .map(|d| DofSpec {
                name: d.name.clone(),
                role: d.role,
                unit: d.unit.clone(),
                phase_input: d.phase_input,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cycles == 0 {
            return Err(Error::config("n_cycles", "must be at least 1"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::config("sample_rate_hz", "must be positive"));
        }
        let dur = &self.cycle_duration_s;
        if !(dur.mean.is_finite() && dur.mean > 0.0) {
            return Err(Error::config("cycle_duration_s.mean", "must be positive"));
        }
        for (field, v) in [
            ("cycle_duration_s.jitter", dur.jitter),
            ("speed_warp", self.speed_warp),
            ("amplitude_variation", self.amplitude_variation),
            ("shared_amplitude_variation", self.shared_amplitude_variation),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, format!("must lie in [0, 1), got {v}")));
            }
        }
        validate_dofs(&self.dof_specs()).map_err(|e| Error::config("dofs", e.to_string()))?;
        for (i, d) in self.dofs.iter().enumerate() {
            let at = |f: &str| format!("dofs[{i}].{f}");
            if !(d.noise_std.is_finite() && d.noise_std >= 0.0) {
                return Err(Error::config(at("noise_std"), "must be finite and nonnegative"));
            }
            if !d.offset.is_finite() {
                return Err(Error::config(at("offset"), "must be finite"));
            }
            if d.harmonics.len() > MAX_HARMONIC_ORDER {
                return Err(Error::config(
                    at("harmonics"),
                    format!("at most {MAX_HARMONIC_ORDER} harmonics are supported"),
                ));
            }
            if d.harmonics.iter().any(|h| !(h.amplitude.is_finite() && h.phase.is_finite())) {
                return Err(Error::config(at("harmonics"), "must be finite"));
            }
            if !d.coupling.is_empty() {
                if d.role == DofRole::Observed {
                    return Err(Error::config(at("coupling"), "observed DOFs cannot be coupled"));
                }
                if !d.harmonics.is_empty() {
                    return Err(Error::config(at("coupling"), "use either harmonics or coupling"));
                }
                for (j, term) in d.coupling.iter().enumerate() {
                    let field = format!("dofs[{i}].coupling[{j}]");
                    match self.dofs.iter().find(|o| o.name == term.source) {
                        Some(src) if src.role == DofRole::Observed => {}
                        Some(_) => {
                            return Err(Error::config(
                                format!("{field}.source"),
                                format!("`{}` is not an observed DOF", term.source),
                            ))
                        }
                        None => {
                            return Err(Error::config(
                                format!("{field}.source"),
                                format!("unknown DOF `{}`", term.source),
                            ))
                        }
                    }
                    if !(term.weight.is_finite() && term.shift.is_finite()) {
                        return Err(Error::config(field, "weight and shift must be finite"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Noiseless value of harmonic DOF `dof` at `phase` with amplitude `scale`.
    pub fn harmonic_value(&self, dof: usize, phase: f64, scale: f64) -> f64 {
        let d = &self.dofs[dof];
        let wave: f64 = d
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, h)| h.amplitude * ((k + 1) as f64 * ALPHA * phase + h.phase).sin())
            .sum();
        d.offset + scale * wave
    }

    /// Noiseless value of any DOF given the cycle's amplitude scales.
    pub fn clean_value(&self, dof: usize, phase: f64, scales: &[f64]) -> f64 {
        let d = &self.dofs[dof];
        if d.coupling.is_empty() {
            return self.harmonic_value(dof, phase, scales[dof]);
        }
        d.offset
            + d.coupling
                .iter()
                .map(|term| {
                    let src = self
                        .dofs
                        .iter()
                        .position(|o| o.name == term.source)
                        .expect("validated coupling source");
                    term.weight * self.harmonic_value(src, phase + term.shift, scales[src])
                })
                .sum::<f64>()
    }
}

/// Monotone map `[0,1] -> [0,1]`: the normalized integral of
/// `1 + strength * sum_k a_k sin(2 pi k u + b_k)` with `sum a_k = 1`, which
/// stays positive for `strength < 1`.
struct Warp {
    strength: f64,
    weights: [f64; WARP_TERMS],
    offsets: [f64; WARP_TERMS],
}

impl Warp {
    fn sample(strength: f64, rng: &mut impl Rng) -> Self {
        let mut weights = [0.0; WARP_TERMS];
        let mut offsets = [0.0; WARP_TERMS];
        for k in 0..WARP_TERMS {
            weights[k] = rng.random_range(0.05..1.0);
            offsets[k] = rng.random_range(0.0..TAU);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            strength,
            weights,
            offsets,
        }
    }

    fn apply(&self, u: f64) -> f64 {
        let mut w = u;
        for k in 0..WARP_TERMS {
            let freq = TAU * (k + 1) as f64;
            w += self.strength * self.weights[k] * (self.offsets[k].cos() - (freq * u + self.offsets[k]).cos())
                / freq;
        }
        w
    }
}

/// Generates a dataset and its ground truth. Deterministic for a fixed seed.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dofs = config.dof_specs();
    let n_dofs = dofs.len();
    let noise: Vec<Option<Normal<f64>>> = config
        .dofs
        .iter()
        .map(|d| (d.noise_std > 0.0).then(|| Normal::new(0.0, d.noise_std).expect("validated std")))
        .collect();

    let mut cycles = Vec::with_capacity(config.n_cycles);
    let mut truth = Vec::with_capacity(config.n_cycles);
    for c in 0..config.n_cycles {
        let jitter = config.cycle_duration_s.jitter;
        let duration = config.cycle_duration_s.mean
            * (1.0 + if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 });
        let samples = ((duration * config.sample_rate_hz).round() as usize + 1).max(2);
        let warp = Warp::sample(config.speed_warp, &mut rng);
        let shared_var = config.shared_amplitude_variation;
        let shared = 1.0 + if shared_var > 0.0 { rng.random_range(-shared_var..shared_var) } else { 0.0 };
        let var = config.amplitude_variation;
        let scales: Vec<f64> = (0..n_dofs)
            .map(|_| shared * (1.0 + if var > 0.0 { rng.random_range(-var..var) } else { 0.0 }))
            .collect();

        let last = (samples - 1) as f64;
        let phases: Vec<f64> = (0..samples)
            .map(|i| {
                if i + 1 == samples {
                    PHASE_PERIOD
                } else {
                    PHASE_PERIOD * warp.apply(i as f64 / last)
                }
            })
            .collect();
        let times: Vec<f64> = (0..samples).map(|i| i as f64 / config.sample_rate_hz).collect();
        let clean: Vec<Vec<f64>> = (0..n_dofs)
            .map(|d| phases.iter().map(|&phi| config.clean_value(d, phi, &scales)).collect())
            .collect();
        let columns: Vec<Vec<f64>> = clean
            .iter()
            .zip(&noise)
            .map(|(col, dist)| match dist {
                Some(dist) => col.iter().map(|&v| v + dist.sample(&mut rng)).collect(),
                None => col.clone(),
            })
            .collect();

        cycles.push(Demonstration {
            cycle_id: config.first_cycle_id + c as u64,
            times,
            columns,
        });
        truth.push(CycleTruth {
            phases,
            clean,
            amplitude_scales: scales,
        });
    }
    let dataset = Dataset::new(dofs, cycles)?;
    Ok(SynthOutput { dataset, truth })
}
