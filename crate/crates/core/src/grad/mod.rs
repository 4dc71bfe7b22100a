//! Dense tensors and a small reverse-mode differentiation engine.

mod autodiff;
mod check;
mod eval;
mod graph;
mod tensor;

pub use autodiff::{backward, evaluate_scalar};
pub use check::{finite_diff_check, DENOM_FLOOR};
pub use eval::Bindings;
pub use graph::{ComputeGraph, NodeId, Op, NORM_SMOOTHING};
pub use tensor::Tensor;
