//! Dense matrices, reverse-mode differentiation, parameters and plain
//! gradient descent.

mod gradcheck;
mod matrix;
mod params;
mod rng;
mod tape;

pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, numeric_gradients, GradCheckReport,
    ParamCheck,
};
pub use matrix::{dot, Matrix};
pub use params::{ParamId, ParamStore, Parameter};
pub use rng::{derive_seed, RngStream};
pub use tape::{forward_backward, sigmoid, softplus, Gradients, Tape, Var, LOG_FLOOR};
