//! Tensors, a reverse-mode autodiff graph that supports double backward,
//! and the gradient-matching primitives built on top of it.

pub mod distance;
pub mod grads;
pub mod graph;
pub(crate) mod kernels;
pub mod tensor;

pub use distance::{DistanceKind, GradDistance};
pub use grads::{
    finite_diff, grad_params, grad_params_weighted, grad_synthetic, loss_node, matching_gradient, matching_value,
    try_finite_diff, InputGradient, LossKind,
};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
