//! Lipschitz Hamiltonians with deterministic Clarke selections.
//!
//! Every model exposes `H(x, z)`, one element of the Clarke generalized
//! gradient `∂_z H(x, z)`, and a global Lipschitz bound. Models that are
//! `C^{1,1}` in `z` also provide `H_p` and a selection of the Clarke
//! generalized Jacobian of `H_p`. Tie-breaks on kink sets:
//!
//! * eikonal `|z|`: the zero vector at `z = 0`;
//! * max-affine: the slope of the lowest active index;
//! * Huber: the inner branch `I / δ` on the sphere `|z| = δ`.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::fem::FeSpace;
use crate::mesh::Point;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// One affine piece `a · z + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePiece {
    pub slope: Vec2,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianModel {
    Zero,
    Eikonal,
    MaxAffine(Vec<AffinePiece>),
    Huber { delta: f64 },
}

impl fmt::Display for HamiltonianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HamiltonianModel::Zero => write!(f, "zero"),
            HamiltonianModel::Eikonal => write!(f, "eikonal"),
            HamiltonianModel::MaxAffine(p) => write!(f, "maxaffine[{} pieces]", p.len()),
            HamiltonianModel::Huber { delta } => write!(f, "huber:{delta}"),
        }
    }
}

impl HamiltonianModel {
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::invalid(format!("huber width must be positive, got {delta}")));
        }
        Ok(HamiltonianModel::Huber { delta })
    }

    pub fn max_affine(pieces: Vec<AffinePiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("max-affine Hamiltonian needs at least one piece"));
        }
        for p in &pieces {
            if !(p.slope.x.is_finite() && p.slope.y.is_finite() && p.offset.is_finite()) {
                return Err(Error::invalid("max-affine pieces must be finite"));
            }
        }
        Ok(HamiltonianModel::MaxAffine(pieces))
    }

    /// Parses `zero`, `eikonal`, `huber:<delta>` or `maxaffine:<csv file>`
    /// where every csv row reads `a1,a2,b`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        match (name, arg) {
            ("zero", None) => Ok(HamiltonianModel::Zero),
            ("eikonal", None) => Ok(HamiltonianModel::Eikonal),
            ("huber", Some(d)) => {
                let delta: f64 = d
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("invalid huber width in hamiltonian '{spec}'")))?;
                Self::huber(delta)
            }
            ("maxaffine", Some(path)) => Self::max_affine(read_pieces(Path::new(path))?),
            _ => Err(Error::invalid(format!("unknown hamiltonian '{spec}'"))),
        }
    }

    pub fn value(&self, _x: Point, z: Vec2) -> f64 {
        match self {
            HamiltonianModel::Zero => 0.0,
            HamiltonianModel::Eikonal => z.norm(),
            HamiltonianModel::MaxAffine(pieces) => pieces[active_piece(pieces, z)].eval(z),
            HamiltonianModel::Huber { delta } => {
                let r = z.norm();
                if r <= *delta {
                    r * r / (2.0 * delta)
                } else {
                    r - 0.5 * delta
                }
            }
        }
    }

    /// A deterministic element of `∂_z H(x, z)`; the gradient wherever `H`
    /// is differentiable.
    pub fn clarke_selection(&self, x: Point, z: Vec2) -> Vec2 {
        match self {
            HamiltonianModel::Zero => Vec2::zeros(),
            HamiltonianModel::Eikonal => {
                let r = z.norm();
                if r == 0.0 {
                    Vec2::zeros()
                } else {
                    z / r
                }
            }
            HamiltonianModel::MaxAffine(pieces) => pieces[active_piece(pieces, z)].slope,
            HamiltonianModel::Huber { .. } => self.hp(x, z).expect("huber has H_p"),
        }
    }

    /// Global bound `C_H` on the selections, the Lipschitz modulus of `H`
    /// and, when present, on `|H_p|` and the Lipschitz modulus of `H_p`.
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            HamiltonianModel::Zero => 0.0,
            HamiltonianModel::Eikonal => 1.0,
            HamiltonianModel::MaxAffine(pieces) => pieces.iter().map(|p| p.slope.norm()).fold(0.0, f64::max),
            HamiltonianModel::Huber { delta } => 1.0f64.max(1.0 / delta),
        }
    }

    pub fn has_hp(&self) -> bool {
        matches!(self, HamiltonianModel::Zero | HamiltonianModel::Huber { .. })
    }

    /// `H_p(x, z)` for models that are continuously differentiable in `z`.
    pub fn hp(&self, _x: Point, z: Vec2) -> Option<Vec2> {
        match self {
            HamiltonianModel::Zero => Some(Vec2::zeros()),
            HamiltonianModel::Huber { delta } => {
                let r = z.norm();
                Some(if r <= *delta { z / *delta } else { z / r })
            }
            _ => None,
        }
    }

    /// A deterministic element of the Clarke generalized Jacobian of `H_p`.
    pub fn hp_clarke_selection(&self, _x: Point, z: Vec2) -> Option<Mat2> {
        match self {
            HamiltonianModel::Zero => Some(Mat2::zeros()),
            HamiltonianModel::Huber { delta } => {
                let r = z.norm();
                Some(if r <= *delta {
                    inner_branch(*delta)
                } else {
                    outer_branch(z)
                })
            }
            _ => None,
        }
    }

    /// Branch matrices of the generalized Jacobian of `H_p` when `z` lies
    /// within `band` of a kink set, `None` otherwise (or without `H_p`).
    /// Convex combinations of the pair lie in the Clarke Jacobian at the
    /// kink itself.
    pub fn hp_clarke_extremes(&self, _x: Point, z: Vec2, band: f64) -> Option<(Mat2, Mat2)> {
        match self {
            HamiltonianModel::Huber { delta } => {
                let r = z.norm();
                if (r - delta).abs() <= band && r > 0.0 {
                    // outer branch evaluated on the sphere itself
                    Some((inner_branch(*delta), outer_branch(z * (*delta / r))))
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Lower bound on the distance from `z` to the set where `H(x, ·)` is
    /// not differentiable; infinite for `C^1` models.
    pub fn kink_distance(&self, _x: Point, z: Vec2) -> f64 {
        match self {
            HamiltonianModel::Zero | HamiltonianModel::Huber { .. } => f64::INFINITY,
            HamiltonianModel::Eikonal => z.norm(),
            HamiltonianModel::MaxAffine(pieces) => {
                let i = active_piece(pieces, z);
                let top = pieces[i].eval(z);
                pieces
                    .iter()
                    .enumerate()
                    .filter(|&(j, p)| j != i && p.slope != pieces[i].slope)
                    .map(|(_, p)| (top - p.eval(z)) / (pieces[i].slope - p.slope).norm())
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Distance from `z` to the set where `H_p(x, ·)` is not differentiable.
    pub fn hp_kink_distance(&self, _x: Point, z: Vec2) -> f64 {
        match self {
            HamiltonianModel::Huber { delta } => (z.norm() - delta).abs(),
            _ => f64::INFINITY,
        }
    }

    pub fn is_convex_in_z(&self) -> bool {
        true
    }
}

impl AffinePiece {
    pub fn new(a1: f64, a2: f64, b: f64) -> Self {
        AffinePiece {
            slope: Vec2::new(a1, a2),
            offset: b,
        }
    }

    fn eval(&self, z: Vec2) -> f64 {
        self.slope.dot(&z) + self.offset
    }
}

fn active_piece(pieces: &[AffinePiece], z: Vec2) -> usize {
    let mut best = 0;
    let mut best_val = pieces[0].eval(z);
    for (i, p) in pieces.iter().enumerate().skip(1) {
        let v = p.eval(z);
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

fn inner_branch(delta: f64) -> Mat2 {
    Mat2::identity() / delta
}

fn outer_branch(z: Vec2) -> Mat2 {
    let r = z.norm();
    (Mat2::identity() - z * z.transpose() / (r * r)) / r
}

fn read_pieces(path: &Path) -> Result<Vec<AffinePiece>> {
    let text = std::fs::read_to_string(path)?;
    let mut pieces = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match nums {
            Ok(v) if v.len() == 3 => pieces.push(AffinePiece::new(v[0], v[1], v[2])),
            _ => {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("expected 'a1,a2,b', got '{line}'"),
                })
            }
        }
    }
    Ok(pieces)
}

/// Secant matrix `A` with `A · (z1 - z2) = H(x, z1) - H(x, z2)`.
///
/// The mean of the selections along the segment from `z2` to `z1` is
/// computed by adaptive Simpson quadrature and corrected in the direction
/// `z1 - z2` so that the secant identity holds to rounding.
pub fn mean_value_matrix(model: &HamiltonianModel, x: Point, z1: Vec2, z2: Vec2) -> Result<Vec2> {
    let d = z1 - z2;
    let dd = d.norm_squared();
    if dd == 0.0 {
        return Ok(model.clarke_selection(x, z1));
    }
    let f = |t: f64| model.clarke_selection(x, z2 + d * t);
    let mean = adaptive_simpson(&f, 1e-13, 50)?;
    let dh = model.value(x, z1) - model.value(x, z2);
    Ok(mean + d * ((dh - mean.dot(&d)) / dd))
}

/// Vector-valued adaptive Simpson rule on `[0, 1]`. Intervals that reach the
/// depth limit are accepted as they are; the rule fails if the error left
/// unresolved that way exceeds `1e-8`.
fn adaptive_simpson<F: Fn(f64) -> Vec2>(f: &F, tol: f64, max_depth: u32) -> Result<Vec2> {
    struct Segment {
        a: f64,
        b: f64,
        fa: Vec2,
        fm: Vec2,
        fb: Vec2,
        whole: Vec2,
        tol: f64,
        depth: u32,
    }
    let simpson = |a: f64, b: f64, fa: Vec2, fm: Vec2, fb: Vec2| (fa + fm * 4.0 + fb) * ((b - a) / 6.0);
    let (fa, fm, fb) = (f(0.0), f(0.5), f(1.0));
    let mut stack = vec![Segment {
        a: 0.0,
        b: 1.0,
        fa,
        fm,
        fb,
        whole: simpson(0.0, 1.0, fa, fm, fb),
        tol,
        depth: 0,
    }];
    let mut total = Vec2::zeros();
    let mut unresolved = 0.0;
    let mut evaluations = 3usize;
    while let Some(s) = stack.pop() {
        let m = 0.5 * (s.a + s.b);
        let (lm, rm) = (0.5 * (s.a + m), 0.5 * (m + s.b));
        let (flm, frm) = (f(lm), f(rm));
        evaluations += 2;
        let left = simpson(s.a, m, s.fa, flm, s.fm);
        let right = simpson(m, s.b, s.fm, frm, s.fb);
        let err = (left + right - s.whole).norm();
        // rounding noise of the selection near a kink keeps the error from
        // shrinking with the width; short pieces with an absolutely
        // negligible error are accepted as they are
        let negligible = s.b - s.a < 1e-6 && err <= 1e-15 * (1.0 + s.fm.norm());
        if err <= 15.0 * s.tol {
            total += left + right + (left + right - s.whole) / 15.0;
        } else if negligible {
            total += left + right;
        } else if s.depth >= max_depth {
            total += left + right;
            unresolved += err;
        } else {
            let half = 0.5 * s.tol;
            stack.push(Segment {
                a: s.a,
                b: m,
                fa: s.fa,
                fm: flm,
                fb: s.fm,
                whole: left,
                tol: half,
                depth: s.depth + 1,
            });
            stack.push(Segment {
                a: m,
                b: s.b,
                fa: s.fm,
                fm: frm,
                fb: s.fb,
                whole: right,
                tol: half,
                depth: s.depth + 1,
            });
        }
        if evaluations > 2_000_000 {
            return Err(Error::Quadrature("segment average needs too many evaluations".into()));
        }
    }
    if unresolved > 1e-8 {
        return Err(Error::Quadrature(format!(
            "segment average left error {unresolved:e} unresolved"
        )));
    }
    Ok(total)
}

/// Per-element selections `ξ_T = selection(centroid, Du_h|_T)`.
pub fn selection_field(model: &HamiltonianModel, space: &FeSpace, u: &[f64]) -> Vec<Vec2> {
    (0..space.n_elements())
        .map(|t| model.clarke_selection(space.element(t).centroid, space.gradient(t, u)))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::interpolate_nodal;
    use crate::mesh::TriMesh;

    const O: Point = Point::new(0.0, 0.0);

    #[test]
    fn eikonal_values() {
        let h = HamiltonianModel::Eikonal;
        let z = Vec2::new(3.0, 4.0);
        assert_eq!(h.value(O, z), 5.0);
        assert!((h.clarke_selection(O, z) - Vec2::new(0.6, 0.8)).norm() < 1e-15);
        assert_eq!(h.clarke_selection(O, Vec2::zeros()), Vec2::zeros());
        assert!(h.hp(O, z).is_none());
    }

    #[test]
    fn huber_at_origin_and_tie_break() {
        let h = HamiltonianModel::huber(1.0).unwrap();
        assert_eq!(h.value(O, Vec2::zeros()), 0.0);
        assert_eq!(h.hp(O, Vec2::zeros()).unwrap(), Vec2::zeros());
        assert_eq!(h.hp_clarke_selection(O, Vec2::zeros()).unwrap(), Mat2::identity());
        // on the sphere: inner branch
        let z = Vec2::new(0.6, 0.8);
        assert_eq!(h.hp_clarke_selection(O, z).unwrap(), Mat2::identity());
        let (inner, outer) = h.hp_clarke_extremes(O, z, 1e-12).unwrap();
        assert_eq!(inner, Mat2::identity());
        assert!((outer * z).norm() < 1e-15);
        assert!(h.hp_clarke_extremes(O, Vec2::new(2.0, 0.0), 1e-3).is_none());
        assert_eq!(h.lipschitz_constant(), 1.0);
        assert_eq!(HamiltonianModel::huber(0.25).unwrap().lipschitz_constant(), 4.0);
        assert!(HamiltonianModel::huber(0.0).is_err());
    }

    #[test]
    fn max_affine_lowest_index_wins() {
        let h = HamiltonianModel::max_affine(vec![AffinePiece::new(1.0, 0.0, 0.0), AffinePiece::new(-1.0, 0.0, 0.0)])
            .unwrap();
        assert_eq!(h.clarke_selection(O, Vec2::zeros()), Vec2::new(1.0, 0.0));
        assert_eq!(h.clarke_selection(O, Vec2::new(-0.5, 3.0)), Vec2::new(-1.0, 0.0));
        assert_eq!(h.value(O, Vec2::new(-0.5, 3.0)), 0.5);
        assert_eq!(h.kink_distance(O, Vec2::new(0.75, 0.0)), 0.75);
        assert!(HamiltonianModel::max_affine(vec![]).is_err());
    }

    #[test]
    fn parse_specs() {
        assert_eq!(HamiltonianModel::parse("zero").unwrap(), HamiltonianModel::Zero);
        assert_eq!(
            HamiltonianModel::parse("huber:0.5").unwrap(),
            HamiltonianModel::Huber { delta: 0.5 }
        );
        let err = HamiltonianModel::parse("bogus").unwrap_err().to_string();
        assert!(err.contains("bogus"));
        assert!(HamiltonianModel::parse("huber:-1").is_err());
        assert!(HamiltonianModel::parse("eikonal:3").is_err());

        let dir = std::env::temp_dir().join(format!("nsfem-pieces-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join("pieces.csv");
        std::fs::write(&file, "# a1,a2,b\n1,0,0\n-1,0,0.5\n").unwrap();
        let h = HamiltonianModel::parse(&format!("maxaffine:{}", file.display())).unwrap();
        assert_eq!(h.lipschitz_constant(), 1.0);
        std::fs::write(&file, "1,0\n").unwrap();
        assert!(matches!(
            HamiltonianModel::parse(&format!("maxaffine:{}", file.display())),
            Err(Error::Parse { line: 1, .. })
        ));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn mean_value_examples() {
        let h = HamiltonianModel::Eikonal;
        let a = mean_value_matrix(&h, O, Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)).unwrap();
        assert!(a.norm() < 1e-14, "{a}");
        assert_eq!(
            mean_value_matrix(&HamiltonianModel::Zero, O, Vec2::new(1.0, 2.0), Vec2::zeros()).unwrap(),
            Vec2::zeros()
        );

        // |z1| = |z2| off the origin: secant slope zero along d
        let z1 = Vec2::new(1.0, 1.0);
        let z2 = Vec2::new(-1.0, 1.0);
        let a = mean_value_matrix(&h, O, z1, z2).unwrap();
        assert!(a.dot(&(z1 - z2)).abs() < 1e-14);
        assert!(a.norm() <= 1.0);

        let ma = HamiltonianModel::max_affine(vec![AffinePiece::new(1.0, 0.0, 0.0), AffinePiece::new(-1.0, 0.0, 0.0)])
            .unwrap();
        let a = mean_value_matrix(&ma, O, Vec2::new(2.0, 0.0), Vec2::new(-2.0, 0.0)).unwrap();
        assert!(a.x.abs() <= 1.0 && a.y == 0.0);
        assert!(a.x.abs() < 1e-13);
    }

    #[test]
    fn selection_fields() {
        let space = FeSpace::new(Arc::new(TriMesh::unit_square(4).unwrap())).unwrap();
        let zero = vec![0.0; space.n_free()];
        assert!(selection_field(&HamiltonianModel::Eikonal, &space, &zero)
            .iter()
            .all(|x| *x == Vec2::zeros()));

        let full = FeSpace::without_dirichlet(space.mesh_arc()).unwrap();
        let u = interpolate_nodal(&full, |p| p.x).unwrap();
        for xi in selection_field(&HamiltonianModel::Eikonal, &full, &u) {
            assert!((xi - Vec2::new(1.0, 0.0)).norm() < 1e-14);
        }
    }
}
