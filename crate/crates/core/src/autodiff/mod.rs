//! Dense matrices and reverse-mode differentiation.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use params::{glorot, sgd_step, Adam, ParamSet};
pub use tape::{evaluate, Gradients, Primitive, Tape, Var, LOG_SHIFT};
