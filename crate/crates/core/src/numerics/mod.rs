//! Dense tensors, a reverse-mode autodiff tape, a portable RNG, and a
//! finite-difference gradient checker.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, relative_error};
pub use rng::RngStream;
pub use tape::{Gradients, NodeId, OpKind, Tape};
pub use tensor::Tensor;
