//! Minimal reverse-mode automatic differentiation over dense matrices.

mod graph;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use tensor::{Real, Tensor};
