//! Simulation and verification toolkit for the gradient-flow dynamics of
//! contrastive two-modality learning on the unit sphere.
//!
//! The library integrates the unconstrained-features flow with a learnable
//! temperature, the reduced scalar and two-dimensional models, evaluates the
//! closed-form bounds that govern the modality gap, and provides the
//! mitigation transforms (temperature control, modality swapping) used by
//! the experiment runner.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod mitigate;
pub mod repulsion;
pub mod theory;

pub use error::{Error, Result};
