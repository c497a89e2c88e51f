//! Dense tensors, a reverse-mode tape and the Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use params::{uniform_init, Bound, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
