//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! The graph is built dynamically as [`Var`] operations run. [`grad`] walks it
//! backwards; in [`GradMode::CreateGraph`] the returned gradients are graph
//! nodes themselves, which is what lets a loss evaluated after an SGD step be
//! differentiated with respect to the parameters before that step.

mod backward;
mod error;
pub mod kernels;
mod param;
mod tensor;
mod var;

#[cfg(any(test, feature = "gradcheck"))]
pub mod gradcheck;

pub use backward::{grad, GradMode, Gradients};
pub use error::{GradError, Result};
pub use param::{adam_step, sgd_shift, AdamConfig, AdamState, ParamSet};
pub use tensor::{Shape, Tensor};
pub use var::{Rect, Var};
