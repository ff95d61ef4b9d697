//! Reverse-mode automatic differentiation over dense f64 tensors.

pub mod checkpoint;
mod gemm;
pub mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod value;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{BinaryKind, Gradients, Graph, UnaryKind, Var};
pub use params::{ParamId, ParamStore};
pub use value::Tensor;
