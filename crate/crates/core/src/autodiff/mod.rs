//! Small reverse-mode autodiff engine over dense `f64` arrays, plus Adam.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{AdamState, DEFAULT_BETAS, DEFAULT_EPS};
pub use gradcheck::{grad_check, relative_error, MAX_CHECKED_PARAMS};
pub use graph::{Gradients, Graph, NodeId, LAYER_NORM_EPS, LEAKY_SLOPE};
pub use tensor::Tensor;
