// `!(x > 0.0)` is the NaN-rejecting guard throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos;
pub mod currents;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod hermite;
pub mod quadrature;
pub mod rng;
pub mod watanabe;

pub use error::{Error, Result};
