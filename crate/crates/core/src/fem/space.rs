use std::sync::Arc;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};

/// Area, barycentric gradients and centroid of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [Vector2<f64>; 3],
    pub centroid: Point,
}

/// Continuous piecewise-linear Lagrange space on a triangulation.
///
/// With Dirichlet elimination only interior vertices carry degrees of
/// freedom and every function vanishes on the boundary.
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<TriMesh>,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<usize>,
    geometry: Vec<ElementGeometry>,
    dirichlet: bool,
}

impl FeSpace {
    pub fn new(mesh: Arc<TriMesh>) -> Result<Self> {
        Self::build(mesh, true)
    }

    /// Every vertex is a degree of freedom (no boundary condition).
    pub fn without_dirichlet(mesh: Arc<TriMesh>) -> Result<Self> {
        Self::build(mesh, false)
    }

    fn build(mesh: Arc<TriMesh>, dirichlet: bool) -> Result<Self> {
        let mut dof_of_vertex = vec![None; mesh.n_vertices()];
        let mut vertex_of_dof = Vec::new();
        for v in 0..mesh.n_vertices() {
            if !(dirichlet && mesh.is_boundary(v)) {
                dof_of_vertex[v] = Some(vertex_of_dof.len());
                vertex_of_dof.push(v);
            }
        }
        let mut geometry = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let area = mesh.signed_area(t);
            if !(area > 0.0) || !area.is_finite() {
                return Err(Error::DegenerateElement { element: t, area });
            }
            let [a, b, c] = mesh.corners(t);
            // grad l_i = rot90(opposite edge) / (2 area), counter-clockwise
            let inv = 0.5 / area;
            let g = |p: Point, q: Point| Vector2::new(p.y - q.y, q.x - p.x) * inv;
            geometry.push(ElementGeometry {
                area,
                grads: [g(b, c), g(c, a), g(a, b)],
                centroid: mesh.centroid(t),
            });
        }
        Ok(FeSpace {
            mesh,
            dof_of_vertex,
            vertex_of_dof,
            geometry,
            dirichlet,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<TriMesh> {
        Arc::clone(&self.mesh)
    }

    /// Dimension of the discrete space.
    pub fn n_free(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn has_dirichlet(&self) -> bool {
        self.dirichlet
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, dof: usize) -> usize {
        self.vertex_of_dof[dof]
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.vertex_of_dof
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.len()
    }

    pub fn element(&self, t: usize) -> &ElementGeometry {
        &self.geometry[t]
    }

    pub fn mesh_size(&self) -> f64 {
        self.mesh.mesh_size()
    }

    /// Degrees of freedom of the three corners of `t`.
    pub fn element_dofs(&self, t: usize) -> [Option<usize>; 3] {
        let tri = self.mesh.triangles()[t];
        [
            self.dof_of_vertex[tri[0]],
            self.dof_of_vertex[tri[1]],
            self.dof_of_vertex[tri[2]],
        ]
    }

    /// Nodal values on `t`; eliminated boundary vertices contribute zero.
    pub fn local_values(&self, t: usize, u: &[f64]) -> [f64; 3] {
        self.element_dofs(t).map(|d| d.map_or(0.0, |i| u[i]))
    }

    /// The (constant) gradient of `u` on `t`.
    pub fn gradient(&self, t: usize, u: &[f64]) -> Vector2<f64> {
        let vals = self.local_values(t, u);
        let g = &self.geometry[t].grads;
        g[0] * vals[0] + g[1] * vals[1] + g[2] * vals[2]
    }

    /// Physical point of barycentric coordinates `l` in `t`.
    pub fn map_point(&self, t: usize, l: &[f64; 3]) -> Point {
        let [a, b, c] = self.mesh.corners(t);
        Point::from(a.coords * l[0] + b.coords * l[1] + c.coords * l[2])
    }

    pub fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n_free() {
            return Err(Error::DimensionMismatch {
                expected: self.n_free(),
                found: u.len(),
            });
        }
        Ok(())
    }
}
