//! Stochastic optimal control of ODEs with random path-dependent coefficients:
//! exact dynamic programming over a quantized noise tree, path-dependent Itô
//! calculus on the tree, and sandwich bounds built from a regularized
//! Markovian HJB equation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod approximation;
pub mod control_value;
pub mod dynamics;
pub mod error;
pub mod path_space;
pub mod rng;
pub mod scenario;
pub mod viscosity;

pub use error::{Error, Result};
