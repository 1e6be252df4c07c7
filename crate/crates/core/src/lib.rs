//! Piecewise-linear finite elements for viscous Hamilton-Jacobi equations
//! and stationary mean field games with nonsmooth Hamiltonians, solved by
//! semismooth Newton iterations built on Clarke generalized derivatives.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too; index loops
// mirror the element formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod hamiltonian;
pub mod hj;
pub mod linalg;
pub mod mesh;
pub mod mfg;
pub mod study;

pub use error::{Error, Result};
