//! Projected time-dependent variational Monte Carlo for spin-1/2 lattices.
//!
//! Time evolution is discretized into product expansions of simple factors.
//! Each factor is either applied exactly (diagonal exponentials) or realized
//! by compressing the transformed state back into a variational ansatz with
//! natural gradient descent.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod lattice;
pub mod operators;

pub use error::{Error, Result};
pub mod ansatz;
pub mod driver;
pub mod estimators;
pub mod exact;
pub mod linalg;
pub mod ngd;
pub mod sampling;
pub mod schemes;
