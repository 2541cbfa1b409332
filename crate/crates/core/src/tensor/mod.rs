//! Dense tensors and a reverse-mode gradient tape.

mod dense;
mod gradcheck;
pub(crate) mod kernels;
mod tape;

pub use dense::{Real, Tensor};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use tape::{gelu, sigmoid, Padding, Tape, Var};
