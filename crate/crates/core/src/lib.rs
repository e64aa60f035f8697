//! Diffusion gait planning on a phase-leg quadruped: offline behavior
//! cloning of a conditional DDPM planner from expert rollouts, followed by
//! preference alignment with reward-free nearest-neighbor labels.

pub mod align;
pub mod config;
pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod evalharness;
pub mod gaitsim;
pub mod ndcore;
pub mod preference;
pub mod rng;

pub use error::{Error, Result};
