//! Minimal dense numeric kernel with reverse-mode differentiation.
//!
//! Values live in [`Tensor`]s; computations are recorded on a [`Graph`] and
//! differentiated with [`Graph::backward`]. [`grad_check`] compares those
//! gradients to central differences, and [`checkpoint`] stores named tensors.

pub mod attention;
pub mod checkpoint;
mod error;
mod float;
pub mod gradcheck;
mod graph;
pub mod optim;
pub mod sparse;
mod tensor;

pub use attention::{AttentionLayout, AttnSegment};
pub use error::{Result, TensorError};
pub use float::{gemm, lit, DType, Float, MatRef};
pub use gradcheck::{grad_check, grad_check_many};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, LinearDecay};
pub use sparse::{Neighborhoods, SparseMatrix};
pub use tensor::{Tensor, MAX_DIMS};
