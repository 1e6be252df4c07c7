//! Randomized invariants of the Hamiltonian models, the discrete operators,
//! the Gram-weighted constants and the mesh layer.

use std::sync::Arc;

use nalgebra::DMatrix;
use nonsmooth_fem::diagnostics::{banach_constant, operator_norm, GramPair};
use nonsmooth_fem::fem::{assemble_mass, shifted_stiffness, FeSpace};
use nonsmooth_fem::hamiltonian::{mean_value_matrix, AffinePiece, HamiltonianModel, Vec2};
use nonsmooth_fem::mesh::{Point, TriMesh};
use proptest::prelude::*;

fn origin() -> Point {
    Point::new(0.3, 0.7)
}

fn vec2() -> impl Strategy<Value = Vec2> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| Vec2::new(a, b))
}

fn model() -> impl Strategy<Value = HamiltonianModel> {
    prop_oneof![
        Just(HamiltonianModel::Eikonal),
        (0.05..2.0f64).prop_map(|d| HamiltonianModel::huber(d).unwrap()),
        Just(
            HamiltonianModel::max_affine(vec![
                AffinePiece::new(1.0, 0.0, 0.0),
                AffinePiece::new(-1.0, 0.5, 0.1),
                AffinePiece::new(0.2, -1.0, -0.3),
            ])
            .unwrap()
        ),
    ]
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn orthogonal(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n).prop_map(|m| m.qr().q())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mean_value_matrix_is_a_bounded_secant(m in model(), z1 in vec2(), z2 in vec2()) {
        let a = mean_value_matrix(&m, origin(), z1, z2).unwrap();
        let dh = m.value(origin(), z1) - m.value(origin(), z2);
        prop_assert!((a.dot(&(z1 - z2)) - dh).abs() <= 1e-10 * (1.0 + dh.abs()));
        prop_assert!(a.norm() <= m.lipschitz_constant() + 1e-12);
    }

    #[test]
    fn selection_matches_difference_quotients_away_from_kinks(m in model(), z in vec2()) {
        prop_assume!(m.kink_distance(origin(), z) > 1e-3);
        let step = 1e-7;
        let sel = m.clarke_selection(origin(), z);
        for (k, e) in [Vec2::x(), Vec2::y()].into_iter().enumerate() {
            let fd = (m.value(origin(), z + e * step) - m.value(origin(), z - e * step)) / (2.0 * step);
            prop_assert!((fd - sel[k]).abs() < 1e-6, "component {} fd {} selection {}", k, fd, sel[k]);
        }
    }

    #[test]
    fn huber_gradient_is_lipschitz(delta in 0.05..2.0f64, z1 in vec2(), z2 in vec2()) {
        let m = HamiltonianModel::huber(delta).unwrap();
        let p1 = m.hp(origin(), z1).unwrap();
        let p2 = m.hp(origin(), z2).unwrap();
        prop_assert!((p1 - p2).norm() <= (z1 - z2).norm() / delta * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn huber_second_derivative_is_bounded(delta in 0.05..2.0f64, z in vec2()) {
        let m = HamiltonianModel::huber(delta).unwrap();
        let xi = m.hp_clarke_selection(origin(), z).unwrap();
        prop_assert!(xi.norm() <= 2.0_f64.sqrt() / delta * (1.0 + 1e-12));
        prop_assert!((xi - xi.transpose()).norm() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifted_stiffness_is_spd(n in 2usize..9, lambda in 0.0..50.0f64, seed in proptest::collection::vec(-1.0..1.0f64, 64)) {
        let space = FeSpace::new(Arc::new(TriMesh::unit_square(n).unwrap())).unwrap();
        let a = shifted_stiffness(&space, lambda);
        let mass = assemble_mass(&space);
        prop_assert_eq!(a.asymmetry(), 0.0);
        let v: Vec<f64> = (0..space.n_free()).map(|i| seed[i % seed.len()] + 1e-3 * i as f64).collect();
        let energy = a.bilinear(&v, &v);
        prop_assert!(energy > 0.0);
        prop_assert!(energy >= lambda * mass.bilinear(&v, &v) * (1.0 - 1e-12));
    }

    #[test]
    fn banach_constant_is_below_operator_norm(a in matrix(7, 5)) {
        let grams = GramPair::identity(5, 7);
        let c = banach_constant(&a, &grams).unwrap();
        let op = operator_norm(&a, &grams).unwrap();
        prop_assert!(c >= 0.0);
        prop_assert!(c <= op * (1.0 + 1e-12));
    }

    #[test]
    fn banach_constant_is_orthogonally_invariant(a in matrix(6, 6), q in orthogonal(6), p in orthogonal(6)) {
        let grams = GramPair::identity(6, 6);
        let c = banach_constant(&a, &grams).unwrap();
        let rotated = banach_constant(&(&q * &a * p.transpose()), &grams).unwrap();
        prop_assert!((c - rotated).abs() <= 1e-10);
    }

    #[test]
    fn refinement_preserves_the_triangulation(n in 1usize..7) {
        let coarse = TriMesh::unit_square(n).unwrap();
        let fine = coarse.refine_uniform();
        prop_assert_eq!(fine.n_triangles(), 4 * coarse.n_triangles());
        prop_assert!((fine.total_area() - 1.0).abs() < 1e-14);
        prop_assert!((fine.mesh_size() - 0.5 * coarse.mesh_size()).abs() < 1e-14);
        prop_assert!((fine.max_shape_ratio() - coarse.max_shape_ratio()).abs() < 1e-10);
        for t in 0..fine.n_triangles() {
            prop_assert!(fine.signed_area(t) > 0.0);
        }
        let interior_edges = fine.edge_multiplicities().values().filter(|&&k| k == 2).count();
        let boundary_edges = fine.edge_multiplicities().values().filter(|&&k| k == 1).count();
        prop_assert_eq!(boundary_edges, 8 * n);
        prop_assert_eq!(2 * interior_edges + boundary_edges, 3 * fine.n_triangles());
    }
}

#[test]
fn unit_square_counts() {
    let mesh = TriMesh::unit_square(4).unwrap();
    assert_eq!(mesh.n_vertices(), 25);
    assert_eq!(mesh.n_triangles(), 32);
    assert!((mesh.mesh_size() - 0.25 * 2.0_f64.sqrt()).abs() < 1e-15);
    assert_eq!(mesh.boundary_flags().iter().filter(|&&b| b).count(), 16);
}

#[test]
fn mesh_text_round_trip() {
    let mesh = TriMesh::unit_square(3).unwrap();
    let text = mesh.to_text();
    let back = TriMesh::read_from(text.as_bytes()).unwrap();
    assert_eq!(back, mesh);
}
