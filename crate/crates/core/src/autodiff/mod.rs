//! Gradient machinery: a reverse-mode tape over dense matrices, a named
//! parameter store and a finite-difference verifier.

mod check;
mod params;
mod tape;

pub use check::{evaluate_with_gradients, finite_difference_check, FdEntry, FdReport, GradResult};
pub use params::{BoundParams, ParamStore, Segment};
pub use tape::{Gradients, Tape, Tensor, Var};
