//! Dense tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, finite_difference_check, GradCheck};
pub use ops::{primitive_forward, Op};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

