//! Minimal reverse-mode differentiation: exactly the tensor operations the
//! occupancy network needs, plus an Adam optimizer.
//!
//! Everything is double precision. A [`Graph`] records one forward pass and
//! supports one backward pass; build a fresh graph per step.

mod adam;
mod fsum;
mod gemm;
mod graph;
mod tensor;

pub use adam::Adam;
pub use graph::{sigmoid, Activation, Graph, Reduction, Resample, Var, BCE_EPS};
pub use tensor::Tensor;
