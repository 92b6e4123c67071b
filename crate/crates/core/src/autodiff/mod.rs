//! Dense-matrix reverse-mode differentiation.

mod check;
mod matrix;
mod tape;

pub use check::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use matrix::Matrix;
pub use tape::{log_softmax, softmax_over_set, Gradients, Tape, Var};
