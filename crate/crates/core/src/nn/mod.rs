//! Minimal differentiable MLPs: batched forward/backward, Adam, parameter EMA
//! and the checkpoint format shared by every trained network in the crate.

mod checkpoint;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, LayerEntry, Manifest, NetworkEntry, TensorEntry};
pub use mlp::{Activation, Arch, Dense, MlpParams, ParamGrads, Tape};
pub use optim::{AdamState, EmaParams};
