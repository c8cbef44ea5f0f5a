//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every op computes its value eagerly and records
//! what it needs for the backward pass. Parameters are leaves created with
//! [`Graph::param`]; constants never receive gradients.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use gradcheck::{gradcheck, relative_error, GradcheckOptions, GradcheckReport};
pub use graph::{sigmoid, softplus, Gradients, Graph, Var};
pub use tensor::{Real, Tensor};
