pub mod arq;
pub mod data;
pub mod dqp;
pub mod envs;
pub mod error;
pub mod grid;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod sampling;
pub mod sde;

pub use error::{Error, Result};
