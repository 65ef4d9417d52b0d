//! Dense `f64` tensors, a reverse-mode autodiff tape and the Adam optimiser.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::Parameters;
pub use tape::{ElementwiseOp, Gradients, Tape, Var};
pub use tensor::Tensor;
