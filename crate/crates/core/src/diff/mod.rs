//! Reverse-mode differentiation, parameters and optimization.

mod gradcheck;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GroupReport};
pub use ops::{gelu_scalar, Csr};
pub use optim::{AdamConfig, OptimizerState};
pub use params::{ParamEntry, ParamStore};
pub use tape::{Gradients, Grads, Tape, Var};
pub use tensor::Tensor;
