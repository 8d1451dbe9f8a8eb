//! Room-acoustics and blind reverberation-time (T60) estimation toolkit.
//!
//! The crate covers the full pipeline: room impulse response simulation and
//! sweep-based measurement, Schroeder decay analysis for ground-truth labels,
//! noisy-reverberant dataset synthesis with ideal-ratio-mask targets, a small
//! tensor/autodiff engine, the two-stage NE-NET/RE-NET estimator with joint
//! training, and the evaluation metrics and significance tests used to judge
//! it.

pub mod dataset;
pub mod decay;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod hash;
pub mod nn;
pub mod room;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
