//! Differentiable numerics: tensors, a reverse-mode tape, SGD and a
//! finite-difference gradient auditor.

mod gradcheck;
mod sgd;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use sgd::{sgd_step, SgdConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
