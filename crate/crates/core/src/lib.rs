//! Skeletal-motion toolkit for text-to-pose generation: geometric losses with
//! analytic gradients, parent-relative joint weighting, sequence termination
//! control, kinematic evaluation metrics, and a small autoregressive model
//! that exercises all of them on synthetic sign-like motion.

pub mod error;
pub mod experiment;
pub mod geom;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod posedata;
pub mod report;
pub mod skeleton;
pub mod termination;
pub mod weighting;

pub use error::{Error, Result};

/// Seeded generator used by every randomized operation.
pub type SeededRng = rand_chacha::ChaCha8Rng;
