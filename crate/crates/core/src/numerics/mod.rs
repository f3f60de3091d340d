//! Dense arrays, reverse-mode differentiation, parameter stores, the
//! adaptive-moment optimizer, finite-difference gradient checking and the
//! checkpoint container.

mod adam;
mod array;
pub mod checkpoint;
mod gradcheck;
mod ops;
mod params;
mod real;
mod tape;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use array::Array;
pub use gradcheck::{grad_check, rel_err, GradCheckOptions, GradCheckReport, ParamCheck};
pub use ops::{sigmoid, softmax_rows, softplus};
pub use params::{Bound, Param, ParamStore};
pub use real::{gemm, Real};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests;
