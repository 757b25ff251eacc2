//! Minimal differentiable dense-network engine.
//!
//! Networks evaluate through a [`Tape`] that records a small set of batched
//! primitives (affine, tanh, relu, exp, log, square, elementwise arithmetic,
//! reductions). One backward sweep yields parameter gradients and, when the
//! input is recorded as a variable, gradients with respect to the input.

mod network;
mod optim;
mod tape;

pub use network::{
    param_count_for, params_from_le_bytes, sgd_step, Activation, GradientSpace, GradientVector,
    HeadOutput, Network, NetworkHeader, OutputHead, LOG_STD_MAX, LOG_STD_MIN,
};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{row, Gradients, ParamId, Tape, Var};
