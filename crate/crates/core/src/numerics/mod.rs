//! Dense tensors, reverse-mode autodiff and first-order optimizers.

mod gradcheck;
pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, Parameters};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{GradBuf, Gradients, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;
