//! Dense tensors, reverse-mode autodiff, Adam and deterministic random streams.

mod optim;
mod params;
mod real;
mod rng;
mod tape;
mod tensor;

pub mod gradcheck;

pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use params::ByteCursor;
pub use real::Real;
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var, ZERO_ROW};
pub(crate) use tape::sigmoid;
pub use tensor::Tensor;
