//! Periodic interaction primitives.
//!
//! Learns a joint Gaussian model over von Mises basis weights of periodic,
//! multi-channel demonstrations (one gait cycle each), then estimates phase
//! from a position/velocity lookup table and conditions the weight belief on
//! each incoming sensor frame to predict observed, latent and controlled
//! channels over the whole cycle with uncertainty.
//!
//! ```no_run
//! use pip_core::{inference::{Engine, ObservationFrame}, model::{train, TrainConfig}, synth};
//!
//! let data = synth::generate(&synth::SynthConfig::gait14())?;
//! let (model, _) = train(&data.dataset, &TrainConfig::default())?;
//! let mut engine = Engine::new(&model);
//! let cycle = &data.dataset.cycles()[0];
//! let phase = engine.step(&ObservationFrame::from_row(&cycle.row(0)))?;
//! let band = engine.predict("knee_moment", 100)?;
//! # let _ = (phase, band);
//! # Ok::<(), pip_core::Error>(())
//! ```

pub mod alignment;
pub mod basis;
pub mod error;
pub mod eval;
pub mod inference;
pub mod manifold;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
