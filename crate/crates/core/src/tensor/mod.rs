//! Deterministic CPU tensors with tape-based reverse-mode differentiation.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod ops;
mod param;
mod real;
mod sgd;

pub use array::Tensor;
pub use checkpoint::{restore_into, Checkpoint};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{ConvGeom, Gradients, Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use sgd::{sgd_step, SgdConfig};
