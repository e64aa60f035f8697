//! Conditional DDPM over joint state-action plans.
//!
//! A plan is a `(horizon + 1) × (state_dim + action_dim)` tensor in
//! normalized units. Row 0's state is the conditioning observation and is
//! inpainted after every reverse step. Training minimizes the masked noise
//! prediction error with heavier weight on actions; sampling runs a strided
//! ancestral DDPM chain with classifier-free guidance.

mod model;
mod plan;
mod planner;
mod sampler;
mod schedule;

pub use model::{
    guided_eps, phase_features, DiffusionConfig, DiffusionModel, ErrorPass, NoisedItem,
    PHASE_FEATURES,
};
pub use plan::{q_sample, LossMask, PlanLayout};
pub use planner::{Plan, Planner, TrainLogEntry, PLANNER_SCHEMA};
pub use sampler::{ddpm_denoise_step, denoise_step_batch, sample_batch};
pub use schedule::NoiseSchedule;
