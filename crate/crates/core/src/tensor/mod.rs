//! Dense row-major tensors, a reverse-mode autodiff tape, AdamW and a
//! finite-difference gradient checker.

mod array;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;

pub use array::{Tensor, TensorError};
pub use gradcheck::{grad_check, GradCheckError, GradCheckReport, ParamCheck};
pub use graph::{CustomOp, Graph, NodeId};
pub use optim::{AdamW, AdamWConfig, OptimState};
