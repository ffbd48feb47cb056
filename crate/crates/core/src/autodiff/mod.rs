//! Reverse-mode automatic differentiation over a small kernel set.

mod gradcheck;
pub mod kernels;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, DEFAULT_STEP, REL_ERROR_FLOOR};
pub use ops::ALPHA_DROPOUT_PRIME;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
