//! Differentiable numerics: tensors, a recorded operation graph with exact
//! reverse-mode gradients, AdamW, the exponential schedule and a
//! finite-difference checker.

mod graph;
mod kernels;
mod optim;
mod tensor;

pub mod gradcheck;

pub use graph::{cv_squared, Attrs, Graph, PrimitiveKind, Var};
pub use optim::{adamw_step, lr_exponential_step, OptimizerState};
pub use tensor::{numel, Init, ParamId, ParamRegistry, Tensor};
