//! Conforming triangulations of polygonal domains.
//!
//! The built-in domain is the unit square. Arbitrary conforming meshes can be
//! read from a small plain-text format:
//!
//! ```text
//! vertices N triangles M
//! x y b        (N lines, b in {0,1} marks Dirichlet boundary vertices)
//! i j k        (M lines, 0-based vertex indices, counter-clockwise)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Point2;

use crate::error::{Error, Result};

pub type Point = Point2<f64>;

/// Undirected edge key with the smaller vertex index first.
pub type Edge = (usize, usize);

fn edge_key(a: usize, b: usize) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    mesh_size: f64,
}

impl TriMesh {
    /// Builds a mesh after checking index ranges, orientation, conformity and
    /// consistency of the boundary flags with the boundary edges.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary: Vec<bool>) -> Result<Self> {
        if vertices.len() != boundary.len() {
            return Err(Error::DimensionMismatch {
                expected: vertices.len(),
                found: boundary.len(),
            });
        }
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(Error::InvalidMesh(format!(
                        "triangle {t} references vertex {v} but only {} vertices exist",
                        vertices.len()
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a vertex")));
            }
        }
        let mesh = Self::from_parts_unchecked(vertices, triangles, boundary);
        for t in 0..mesh.n_triangles() {
            let area = mesh.signed_area(t);
            if !(area > 0.0) {
                return Err(Error::DegenerateElement { element: t, area });
            }
        }
        mesh.check_conformity()?;
        Ok(mesh)
    }

    /// Builds a mesh from vertices and triangles, flagging as boundary every
    /// endpoint of an edge that belongs to a single triangle.
    pub fn from_triangles(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut boundary = vec![false; vertices.len()];
        let counts = edge_counts(&triangles);
        for (&(a, b), &c) in &counts {
            if c == 1 && a < boundary.len() && b < boundary.len() {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        Self::new(vertices, triangles, boundary)
    }

    /// Skips all validation. Intended for tests that need to exercise the
    /// error paths of downstream assembly.
    pub fn from_parts_unchecked(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary: Vec<bool>) -> Self {
        let mut mesh = TriMesh {
            vertices,
            triangles,
            boundary,
            mesh_size: 0.0,
        };
        mesh.mesh_size = (0..mesh.n_triangles()).map(|t| mesh.diameter(t)).fold(0.0, f64::max);
        mesh
    }

    /// Structured mesh of (0,1)^2 with `n` cells per side, each cell split
    /// along its lower-left to upper-right diagonal.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("unit square mesh needs n >= 1 subdivisions"));
        }
        let np = n + 1;
        let mut vertices = Vec::with_capacity(np * np);
        let mut boundary = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                vertices.push(Point::new(i as f64 / n as f64, j as f64 / n as f64));
                boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * np + i;
                let v10 = v00 + 1;
                let v01 = v00 + np;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let mut mesh = Self::from_parts_unchecked(vertices, triangles, boundary);
        // Exact value; the max over edge lengths may differ in the last ulp.
        mesh.mesh_size = std::f64::consts::SQRT_2 / n as f64;
        Ok(mesh)
    }

    /// Red refinement: every triangle is split into four similar children
    /// through its edge midpoints. New vertices are appended after the old
    /// ones in first-seen edge order.
    pub fn refine_uniform(&self) -> TriMesh {
        let counts = edge_counts(&self.triangles);
        let mut vertices = self.vertices.clone();
        let mut boundary = self.boundary.clone();
        let mut midpoint: HashMap<Edge, usize> = HashMap::with_capacity(counts.len());
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>, boundary: &mut Vec<bool>| -> usize {
            let key = edge_key(a, b);
            *midpoint.entry(key).or_insert_with(|| {
                let p = Point::from((vertices[a].coords + vertices[b].coords) * 0.5);
                vertices.push(p);
                boundary.push(counts[&key] == 1);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices, &mut boundary);
            let bc = mid(b, c, &mut vertices, &mut boundary);
            let ca = mid(c, a, &mut vertices, &mut boundary);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut fine = Self::from_parts_unchecked(vertices, triangles, boundary);
        fine.mesh_size = 0.5 * self.mesh_size;
        fine
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Largest element diameter.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let e1 = b - a;
        let e2 = c - a;
        0.5 * (e1.x * e2.y - e1.y * e2.x)
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        Point::from((a.coords + b.coords + c.coords) / 3.0)
    }

    fn edge_lengths(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        [(b - a).norm(), (c - b).norm(), (a - c).norm()]
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let l = self.edge_lengths(t);
        l[0].max(l[1]).max(l[2])
    }

    pub fn inradius(&self, t: usize) -> f64 {
        let l = self.edge_lengths(t);
        2.0 * self.area(t) / (l[0] + l[1] + l[2])
    }

    /// Diameter over inradius, the shape-regularity measure of an element.
    pub fn shape_ratio(&self, t: usize) -> f64 {
        self.diameter(t) / self.inradius(t)
    }

    pub fn max_shape_ratio(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.shape_ratio(t)).fold(0.0, f64::max)
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.n_triangles() {
            let p = self.corners(t);
            for k in 0..3 {
                let u = p[(k + 1) % 3] - p[k];
                let v = p[(k + 2) % 3] - p[k];
                let cos = u.dot(&v) / (u.norm() * v.norm());
                min = min.min(cos.clamp(-1.0, 1.0).acos());
            }
        }
        min
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<Edge> {
        let mut edges: Vec<Edge> = edge_counts(&self.triangles).into_keys().collect();
        edges.sort_unstable();
        edges
    }

    /// Number of triangles sharing each edge.
    pub fn edge_multiplicities(&self) -> HashMap<Edge, usize> {
        edge_counts(&self.triangles)
    }

    fn check_conformity(&self) -> Result<()> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            for (p, q) in [(a, b), (b, c), (c, a)] {
                if let Some(other) = directed.insert((p, q), t) {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({p}, {q}) has the same orientation in triangles {other} and {t}"
                    )));
                }
            }
        }
        let counts = edge_counts(&self.triangles);
        let mut on_boundary_edge = vec![false; self.n_vertices()];
        for (&(a, b), &c) in &counts {
            if c > 2 {
                return Err(Error::InvalidMesh(format!(
                    "edge ({a}, {b}) is shared by {c} triangles"
                )));
            }
            if c == 1 {
                on_boundary_edge[a] = true;
                on_boundary_edge[b] = true;
            }
        }
        for (v, (&flag, &expected)) in self.boundary.iter().zip(&on_boundary_edge).enumerate() {
            if flag != expected {
                return Err(Error::InvalidMesh(format!(
                    "vertex {v} boundary flag is {} but it {} on a boundary edge (hanging node or bad flag)",
                    flag as u8,
                    if expected { "lies" } else { "does not lie" }
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vertices {} triangles {}", self.n_vertices(), self.n_triangles());
        for (p, &b) in self.vertices.iter().zip(&self.boundary) {
            let _ = writeln!(out, "{:?} {:?} {}", p.x, p.y, b as u8);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));

        let parse_err = |line: usize, message: String| Error::Parse { line, message };
        let (line_no, header) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
        let header = header?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let (n_vert, n_tri) = match tokens.as_slice() {
            ["vertices", n, "triangles", m] => (
                n.parse::<usize>()
                    .map_err(|e| parse_err(line_no, format!("vertex count: {e}")))?,
                m.parse::<usize>()
                    .map_err(|e| parse_err(line_no, format!("triangle count: {e}")))?,
            ),
            _ => {
                return Err(parse_err(
                    line_no,
                    format!("expected 'vertices N triangles M', found '{header}'"),
                ))
            }
        };

        let mut vertices = Vec::with_capacity(n_vert);
        let mut boundary = Vec::with_capacity(n_vert);
        for _ in 0..n_vert {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(line_no, format!("expected {n_vert} vertex lines")))?;
            let line = line?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 3 {
                return Err(parse_err(ln, format!("expected 'x y b', found '{line}'")));
            }
            let x: f64 = tok[0].parse().map_err(|e| parse_err(ln, format!("x: {e}")))?;
            let y: f64 = tok[1].parse().map_err(|e| parse_err(ln, format!("y: {e}")))?;
            let b = match tok[2] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(ln, format!("boundary flag must be 0 or 1, found '{other}'"))),
            };
            vertices.push(Point::new(x, y));
            boundary.push(b);
        }
        let mut triangles = Vec::with_capacity(n_tri);
        for _ in 0..n_tri {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(line_no, format!("expected {n_tri} triangle lines")))?;
            let line = line?;
            let idx: std::result::Result<Vec<usize>, _> = line.split_whitespace().map(str::parse).collect();
            match idx {
                Ok(v) if v.len() == 3 => triangles.push([v[0], v[1], v[2]]),
                _ => return Err(parse_err(ln, format!("expected 'i j k', found '{line}'"))),
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content after triangle list".into()));
        }
        TriMesh::new(vertices, triangles, boundary)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn edge_counts(triangles: &[[usize; 3]]) -> HashMap<Edge, usize> {
    let mut counts = HashMap::with_capacity(triangles.len() * 3 / 2 + 1);
    for &[a, b, c] in triangles {
        for (p, q) in [(a, b), (b, c), (c, a)] {
            *counts.entry(edge_key(p, q)).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_counts() {
        let m = TriMesh::unit_square(1).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.mesh_size(), std::f64::consts::SQRT_2);

        // (n+1)^2 vertices and 2n^2 triangles, checked by enumeration below
        let m = TriMesh::unit_square(2).unwrap();
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.n_triangles(), 8);
        let interior: Vec<usize> = (0..9).filter(|&v| !m.is_boundary(v)).collect();
        assert_eq!(interior, vec![4]);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(TriMesh::unit_square(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn area_partition() {
        for n in [1, 3, 4, 7] {
            let m = TriMesh::unit_square(n).unwrap();
            assert!((m.total_area() - 1.0).abs() <= 1e-12);
            assert!((0..m.n_triangles()).all(|t| m.signed_area(t) > 0.0));
        }
    }

    #[test]
    fn refine_counts_and_size() {
        let coarse = TriMesh::unit_square(1).unwrap();
        let fine = coarse.refine_uniform();
        assert_eq!(fine.n_triangles(), 8);
        assert_eq!(fine.mesh_size(), std::f64::consts::SQRT_2 / 2.0);
        assert!((fine.total_area() - 1.0).abs() <= 1e-12);

        let m = TriMesh::unit_square(2).unwrap();
        let n_edges = m.edges().len();
        // Euler: V - E + F = 1 for a disk, so E = 9 + 8 - 1 = 16
        assert_eq!(n_edges, 16);
        let r = m.refine_uniform();
        assert_eq!(r.n_vertices(), m.n_vertices() + n_edges);
    }

    #[test]
    fn refined_mesh_is_valid_and_matches_structured() {
        let r = TriMesh::unit_square(2).unwrap().refine_uniform().refine_uniform();
        let rebuilt = TriMesh::new(
            r.vertices().to_vec(),
            r.triangles().to_vec(),
            r.boundary_flags().to_vec(),
        );
        assert!(rebuilt.is_ok(), "{rebuilt:?}");
        let structured = TriMesh::unit_square(8).unwrap();
        assert_eq!(r.n_vertices(), structured.n_vertices());
        assert_eq!(
            r.boundary_flags().iter().filter(|&&b| b).count(),
            structured.boundary_flags().iter().filter(|&&b| b).count()
        );
        assert_eq!(r.mesh_size(), structured.mesh_size());
    }

    #[test]
    fn min_angle_and_shape_preserved() {
        let m = TriMesh::unit_square(2).unwrap();
        let rr = m.refine_uniform().refine_uniform();
        assert!((m.min_angle() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((rr.min_angle() - m.min_angle()).abs() < 1e-12);
        assert!((rr.max_shape_ratio() - m.max_shape_ratio()).abs() < 1e-9);
    }

    #[test]
    fn interior_edges_appear_twice() {
        let m = TriMesh::unit_square(3).unwrap().refine_uniform();
        for ((a, b), c) in m.edge_multiplicities() {
            let on_boundary = m.is_boundary(a) && m.is_boundary(b);
            assert!(c == 2 || (c == 1 && on_boundary));
        }
    }

    #[test]
    fn text_roundtrip() {
        let m = TriMesh::unit_square(3).unwrap().refine_uniform();
        let text = m.to_text();
        let back = TriMesh::read_from(text.as_bytes()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.boundary_flags(), m.boundary_flags());
    }

    #[test]
    fn rejects_bad_files() {
        let clockwise = "vertices 3 triangles 1\n0 0 1\n1 0 1\n0 1 1\n0 2 1\n";
        assert!(matches!(
            TriMesh::read_from(clockwise.as_bytes()),
            Err(Error::DegenerateElement { element: 0, .. })
        ));
        let bad_header = "verts 3 tris 1\n";
        assert!(matches!(
            TriMesh::read_from(bad_header.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad_flag = "vertices 3 triangles 1\n0 0 1\n1 0 0\n0 1 1\n0 1 2\n";
        assert!(matches!(
            TriMesh::read_from(bad_flag.as_bytes()),
            Err(Error::InvalidMesh(_))
        ));
        let short = "vertices 3 triangles 1\n0 0 1\n1 0 1\n";
        assert!(TriMesh::read_from(short.as_bytes()).is_err());
    }

    #[test]
    fn hanging_node_detected() {
        // Square split into a left triangle and two right triangles that share a
        // midpoint on the diagonal, which the left triangle does not see.
        let v = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(0.5, 0.5),
        ];
        let t = vec![[0, 2, 3], [0, 1, 4], [1, 2, 4]];
        let b = vec![true, true, true, true, false];
        assert!(matches!(TriMesh::new(v, t, b), Err(Error::InvalidMesh(_))));
    }
}
