//! Sparse storage and the linear solvers used by the nonlinear iterations.

mod banded;
mod cg;
mod sparse;

pub use banded::{reverse_cuthill_mckee, BandedLu};
pub use cg::{pcg, CgOutcome};
pub use sparse::{axpy, dot, norm2, CsrMatrix, TripletBuilder};
