//! Tensor operations with reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute; each recorded node
//! keeps its forward value and whatever it needs for the backward sweep.
//! [`Tape::backward`] walks the nodes once in reverse creation order, which is
//! a valid reverse topological order because a node can only reference nodes
//! created before it.

mod kernels;
mod optim;
mod tape;

pub use kernels::conv_output_size;
pub use optim::{Adam, Gradients, Optimizer, OptimizerKind, ParamStore};
pub use tape::{Tape, Var};
