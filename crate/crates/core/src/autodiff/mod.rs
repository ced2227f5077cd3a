//! Reverse-mode differentiation over static operation graphs, the MSE
//! objective, Adam, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState, DEFAULT_LEARNING_RATE};
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Node, NodeId, OpGraph, OpKind, ParamId, Params};
pub use loss::{mse_loss, mse_loss_grad};
