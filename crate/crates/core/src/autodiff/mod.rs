//! N-dimensional arrays with reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; operations are methods on the tape returning
//! [`Var`] handles. [`Tape::backward`] walks the tape in reverse and returns
//! the gradients of all tracked leaves.

mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_many, relative_error, GradCheckReport, DEFAULT_EPS, DEFAULT_TOL,
    REL_ERROR_FLOOR,
};
pub use ops::Padding;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Element, Tensor};
