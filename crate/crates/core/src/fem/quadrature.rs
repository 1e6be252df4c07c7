//! Symmetric quadrature rules on triangles in barycentric coordinates.
//! Weights sum to one; multiply by the element area.

use crate::error::{Error, Result};

pub type QuadPoint = ([f64; 3], f64);

const ORDER1: [QuadPoint; 1] = [([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];

const ORDER2: [QuadPoint; 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

// Six-point rule with positive weights (Dunavant); exact through degree 4.
const A1: f64 = 0.445_948_490_915_965;
const B1: f64 = 1.0 - 2.0 * A1;
const W1: f64 = 0.223_381_589_678_011;
const A2: f64 = 0.091_576_213_509_771;
const B2: f64 = 1.0 - 2.0 * A2;
const W2: f64 = 1.0 / 3.0 - W1;

const ORDER3: [QuadPoint; 6] = [
    ([B1, A1, A1], W1),
    ([A1, B1, A1], W1),
    ([A1, A1, B1], W1),
    ([B2, A2, A2], W2),
    ([A2, B2, A2], W2),
    ([A2, A2, B2], W2),
];

/// Rule for the requested order (1, 2 or 3).
pub fn triangle_rule(order: u32) -> Result<&'static [QuadPoint]> {
    match order {
        1 => Ok(&ORDER1),
        2 => Ok(&ORDER2),
        3 => Ok(&ORDER3),
        _ => Err(Error::invalid(format!(
            "quadrature order must be 1, 2 or 3, got {order}"
        ))),
    }
}

/// Default rule for nonlinear terms.
pub fn default_rule() -> &'static [QuadPoint] {
    &ORDER3
}
