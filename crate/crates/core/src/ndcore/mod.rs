//! Dense numeric substrate: a tanh MLP with hand-written reverse-mode
//! gradients, a sinusoidal step embedding and an Adam optimizer.

mod adam;
mod embed;
mod net;

pub use adam::Adam;
pub use embed::timestep_embed;
pub use net::{Dense, DenseNet, Gradients, NetCheckpoint, Trace, CHECKPOINT_VERSION};
