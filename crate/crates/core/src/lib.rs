//! Finite-horizon stopping boundaries for Brownian motion from a Fredholm
//! integral representation of the continuation set.
//!
//! The pipeline is: define a [`problem::Problem`] in the normalized frame,
//! bracket its boundary with [`bounds`], minimize the penalized residual with
//! [`solver`], and cross-check against the dynamic-programming [`oracle`].

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Quadrature abscissae and weights are kept at their published digits.
#![allow(clippy::excessive_precision)]

pub mod bounds;
pub mod constants;
pub mod fredholm;
pub mod numerics;
pub mod oracle;
pub mod problem;
pub mod solver;
