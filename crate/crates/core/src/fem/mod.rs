//! Piecewise-linear Lagrange elements: spaces, assembly, solution operators
//! and discrete norms.

mod assembly;
mod norms;
mod quadrature;
mod space;

pub use assembly::{
    assemble_element_matrices, assemble_element_vectors, assemble_load, assemble_mass, assemble_stiffness,
    assemble_weighted_mass, interpolate_nodal, local_mass, shifted_stiffness, solve_operator_th, SolutionOperator,
};
pub use norms::{error_vs_exact, norm, NormKind};
pub use quadrature::{default_rule, triangle_rule, QuadPoint};
pub use space::{ElementGeometry, FeSpace};
