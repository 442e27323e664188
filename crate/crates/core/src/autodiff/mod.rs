//! Tensors, the differentiation graph, and a finite-difference oracle.

mod finite_diff;
mod graph;
pub mod ops;
mod tensor;

pub use finite_diff::{finite_difference_entries, finite_difference_gradient, relative_error};
pub use graph::{record, Gradients, Graph, Primitive, Var};
pub use tensor::Tensor;
