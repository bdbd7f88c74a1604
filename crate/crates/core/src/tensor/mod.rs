//! Minimal reverse-mode autodiff engine and the `TNSR` file format.

mod array;
pub mod gradcheck;
mod graph;
pub mod io;
pub(crate) mod kernels;
pub mod primitive_checks;

pub use array::Tensor;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Activation, BatchStats, Graph, NetTag, NormStats, OpTrace, TraceRecord, Var};
pub use io::{tensor_read, tensor_read_any, tensor_write, AnyTensor};
pub use kernels::{ConvParams, PoolParams};
pub use primitive_checks::{check_primitives, PrimitiveCheck, PRIMITIVES};
