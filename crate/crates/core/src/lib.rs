//! Unsupervised novelty detection for multichannel vibration records.
//!
//! A baseline is learned from the first `T_L` windows of a stream: a GAN on
//! capped half-spectrum magnitudes and a one-class joint Gaussian on
//! spectral-energy quartiles. Detection thresholds for a three-element
//! series-parallel limit-state system are tuned to a target reliability index
//! by Monte Carlo sampling over generator output, and incoming windows are
//! then monitored in batches of `V_L` with a static or dynamic baseline.

pub mod engine;
pub mod error;
pub mod features;
pub mod gan;
pub mod gaussian;
pub mod io;
pub mod nn;
pub mod reliability;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
