use super::quadrature::{default_rule, triangle_rule};
use super::space::FeSpace;
use crate::error::{Error, Result};
use crate::linalg::{pcg, BandedLu, CsrMatrix, TripletBuilder};
use crate::mesh::Point;

/// Scatters element matrices produced by `local(t)` into a global matrix on
/// the free dofs. Rows and columns of eliminated vertices are dropped.
pub fn assemble_element_matrices<F>(space: &FeSpace, mut local: F) -> CsrMatrix
where
    F: FnMut(usize) -> [[f64; 3]; 3],
{
    let n = space.n_free();
    let mut builder = TripletBuilder::with_capacity(n, n, 9 * space.n_elements());
    for t in 0..space.n_elements() {
        let dofs = space.element_dofs(t);
        let ke = local(t);
        for (a, da) in dofs.iter().enumerate() {
            let Some(i) = *da else { continue };
            for (b, db) in dofs.iter().enumerate() {
                if let Some(j) = *db {
                    builder.push(i, j, ke[a][b]);
                }
            }
        }
    }
    builder.build()
}

/// Scatters element vectors into a global vector on the free dofs.
pub fn assemble_element_vectors<F>(space: &FeSpace, mut local: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<[f64; 3]>,
{
    let mut out = vec![0.0; space.n_free()];
    for t in 0..space.n_elements() {
        let fe = local(t)?;
        for (a, d) in space.element_dofs(t).iter().enumerate() {
            if let Some(i) = *d {
                out[i] += fe[a];
            }
        }
    }
    Ok(out)
}

/// `K_ij = ∫ ∇φ_j · ∇φ_i`.
pub fn assemble_stiffness(space: &FeSpace) -> CsrMatrix {
    assemble_element_matrices(space, |t| {
        let e = space.element(t);
        let mut ke = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                ke[a][b] = e.area * e.grads[a].dot(&e.grads[b]);
            }
        }
        ke
    })
}

/// Exact P1 element mass matrix `|T| [2 1 1; 1 2 1; 1 1 2] / 12`.
pub fn local_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// `M_ij = ∫ φ_j φ_i`.
pub fn assemble_mass(space: &FeSpace) -> CsrMatrix {
    assemble_element_matrices(space, |t| local_mass(space.element(t).area))
}

/// `W_ij = ∫ w(x) φ_j φ_i` with the order-3 rule; `w` receives the element
/// index, barycentric coordinates and physical point.
pub fn assemble_weighted_mass<W>(space: &FeSpace, mut weight: W) -> CsrMatrix
where
    W: FnMut(usize, &[f64; 3], Point) -> f64,
{
    let rule = default_rule();
    assemble_element_matrices(space, |t| {
        let area = space.element(t).area;
        let mut ke = [[0.0; 3]; 3];
        for (l, w) in rule {
            let c = w * area * weight(t, l, space.map_point(t, l));
            for a in 0..3 {
                for b in 0..3 {
                    ke[a][b] += c * l[a] * l[b];
                }
            }
        }
        ke
    })
}

/// `b_i = ∫ f φ_i` by a symmetric rule of the requested order.
pub fn assemble_load<F>(space: &FeSpace, f: F, quad_order: u32) -> Result<Vec<f64>>
where
    F: Fn(Point) -> f64,
{
    let rule = triangle_rule(quad_order)?;
    assemble_element_vectors(space, |t| {
        let area = space.element(t).area;
        let mut fe = [0.0; 3];
        for (l, w) in rule {
            let x = space.map_point(t, l);
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "load function",
                    x: x.x,
                    y: x.y,
                });
            }
            for a in 0..3 {
                fe[a] += w * area * v * l[a];
            }
        }
        Ok(fe)
    })
}

/// `K + λ M`.
pub fn shifted_stiffness(space: &FeSpace, lambda: f64) -> CsrMatrix {
    assemble_element_matrices(space, |t| {
        let e = space.element(t);
        let m = local_mass(e.area);
        let mut ke = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                ke[a][b] = e.area * e.grads[a].dot(&e.grads[b]) + lambda * m[a][b];
            }
        }
        ke
    })
}

/// Discrete solution operator of `-Δv + λv = g` with homogeneous Dirichlet
/// data: given the load vector of `g`, returns the coefficients of `v_h`.
/// Conjugate gradients to relative residual 1e-12, at most `10 n_free`
/// iterations.
pub fn solve_operator_th(space: &FeSpace, lambda: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "reaction coefficient must be >= 0, got {lambda}"
        )));
    }
    space.check_len(rhs)?;
    let a = shifted_stiffness(space, lambda);
    let max_iter = (10 * space.n_free()).max(10);
    Ok(pcg(&a, rhs, 1e-12, max_iter)?.solution)
}

/// Factorized `K + λM`, for repeated applications of the solution operator.
#[derive(Debug, Clone)]
pub struct SolutionOperator {
    matrix: CsrMatrix,
    lu: BandedLu,
}

impl SolutionOperator {
    pub fn new(space: &FeSpace, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "reaction coefficient must be >= 0, got {lambda}"
            )));
        }
        let matrix = shifted_stiffness(space, lambda);
        let lu = BandedLu::factor(&matrix)?;
        Ok(SolutionOperator { matrix, lu })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn apply(&self, rhs: &[f64]) -> Vec<f64> {
        self.lu.solve(rhs)
    }

    /// `sqrt(r^T A^{-1} r)`, the discrete dual norm weighted by this operator.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        let z = self.lu.solve(r);
        r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }
}

/// Nodal (Lagrange) interpolant on the free dofs.
pub fn interpolate_nodal<G>(space: &FeSpace, g: G) -> Result<Vec<f64>>
where
    G: Fn(Point) -> f64,
{
    let verts = space.mesh().vertices();
    space
        .free_vertices()
        .iter()
        .map(|&v| {
            let p = verts[v];
            let val = g(p);
            if val.is_finite() {
                Ok(val)
            } else {
                Err(Error::NonFinite {
                    what: "interpolated function",
                    x: p.x,
                    y: p.y,
                })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mesh::TriMesh;
    use nalgebra::SymmetricEigen;

    fn space(n: usize) -> FeSpace {
        FeSpace::new(Arc::new(TriMesh::unit_square(n).unwrap())).unwrap()
    }

    fn full_space(n: usize) -> FeSpace {
        FeSpace::without_dirichlet(Arc::new(TriMesh::unit_square(n).unwrap())).unwrap()
    }

    #[test]
    fn stiffness_kernel_and_symmetry() {
        let k = assemble_stiffness(&full_space(3));
        let ones = vec![1.0; k.nrows()];
        assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-13));
        assert_eq!(k.asymmetry(), 0.0);
    }

    #[test]
    fn stiffness_center_entry() {
        // interior vertex of the 2x2 mesh: six incident right triangles
        let k = assemble_stiffness(&space(2));
        assert!((k.get(0, 0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn reference_element_mass() {
        let m = local_mass(0.5);
        assert_eq!(m[0][0], 0.5 * 2.0 / 12.0);
        assert_eq!(m[0][1], 0.5 / 12.0);
    }

    #[test]
    fn mass_total_and_positivity() {
        let m = assemble_mass(&full_space(4));
        let total: f64 = m.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);

        let m = assemble_mass(&space(4)).to_dense();
        let eig = SymmetricEigen::new(m);
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn load_vectors() {
        let s = space(2);
        assert_eq!(assemble_load(&s, |_| 0.0, 3).unwrap(), vec![0.0]);

        let s = space(4);
        let b = assemble_load(&s, |_| 1.0, 1).unwrap();
        let m = assemble_mass(&full_space(4));
        for (dof, bi) in b.iter().enumerate() {
            let v = s.vertex_of_dof(dof);
            let row_sum: f64 = m.row(v).map(|(_, x)| x).sum();
            assert!((bi - row_sum).abs() < 1e-15);
        }

        let s = space(2);
        let b2 = assemble_load(&s, |p| p.x, 2).unwrap();
        let b3 = assemble_load(&s, |p| p.x, 3).unwrap();
        assert!((b2[0] - b3[0]).abs() < 1e-15);
        assert!(assemble_load(&s, |_| 1.0, 5).is_err());
        assert!(matches!(
            assemble_load(&s, |p| if p.x > 0.5 { f64::NAN } else { 0.0 }, 3),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn operator_th_basics() {
        let s = space(8);
        assert!(solve_operator_th(&s, 1.0, &vec![0.0; s.n_free()])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let b = assemble_load(&s, |_| 1.0, 3).unwrap();
        let lambda = 1e8;
        let v = solve_operator_th(&s, lambda, &b).unwrap();
        // reaction dominated: v ≈ M^{-1} b / λ ≈ 1/λ in the interior
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(vmax < 10.0 / lambda && vmax > 0.5 / lambda, "{vmax}");

        let op = SolutionOperator::new(&s, 1.0).unwrap();
        let direct = op.apply(&b);
        let iterative = solve_operator_th(&s, 1.0, &b).unwrap();
        for (a, c) in direct.iter().zip(&iterative) {
            assert!((a - c).abs() < 1e-10);
        }
        assert!(solve_operator_th(&s, -1.0, &b).is_err());
    }

    #[test]
    fn interpolation() {
        let s = space(4);
        assert!(interpolate_nodal(&s, |_| 0.0).unwrap().iter().all(|&v| v == 0.0));
        let vals = interpolate_nodal(&s, |p| p.x + 2.0 * p.y).unwrap();
        for (dof, v) in vals.iter().enumerate() {
            let p = s.mesh().vertices()[s.vertex_of_dof(dof)];
            assert_eq!(*v, p.x + 2.0 * p.y);
        }
        assert!(interpolate_nodal(&s, |_| f64::INFINITY).is_err());
    }
}
