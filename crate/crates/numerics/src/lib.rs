//! Dense f64 tensors, a reverse-mode autodiff graph over a fixed layer
//! vocabulary, and the Adam optimizer with a step-decay schedule.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably for the duration of a
//! forward/backward pass. Gradients come back as a detached [`Gradients`]
//! value, so several graphs can run over the same store concurrently and be
//! reduced before a single [`Adam::step`].

mod error;
mod gradcheck;
mod graph;
mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{NumericsError, Result};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_EPSILON};
pub use graph::{Backprop, Graph, Var};
pub use ops::{Conv2dSpec, GruVars, MASK_FILL};
pub use optim::{Adam, AdamConfig, StepLr};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tensor::Tensor;
