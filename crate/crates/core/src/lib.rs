//! Stability diagnostics for long autoregressive forecast rollouts.

pub mod climatology;
pub mod detectors;
pub mod error;
pub mod extremes;
pub mod gridio;
pub mod memorize;
pub mod perturb;
pub mod spectra;
pub mod synth;

pub use error::{Error, Result};
