//! Dense tensors, a reverse-mode tape, and Adam.

mod adam;
pub mod gradcheck;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_update, AdamState};
pub use real::Real;
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
