//! Exact checks that need no tolerance study: closed-form counts, kernels,
//! fixed points of the solvers and equality cases of the diagnostics.

use std::sync::Arc;

use nalgebra::DMatrix;
use nonsmooth_fem::diagnostics::{banach_constant, fit_rate, perturbation_check, GramPair};
use nonsmooth_fem::fem::{
    assemble_load, assemble_mass, assemble_stiffness, error_vs_exact, interpolate_nodal, norm, solve_operator_th,
    FeSpace, NormKind,
};
use nonsmooth_fem::hamiltonian::{mean_value_matrix, selection_field, HamiltonianModel, Mat2, Vec2};
use nonsmooth_fem::hj::{hj_residual, solve_newton, solve_picard, HjProblem};
use nonsmooth_fem::mesh::{Point, TriMesh};
use nonsmooth_fem::mfg::{
    check_monotonicity, mfg_newton, mfg_residual, CouplingLaw, CouplingModel, MfgProblem, MfgState,
};
use nonsmooth_fem::Result;

use crate::{CliError, CliResult};

type Check = fn(u64) -> Result<Option<String>>;

fn ensure(ok: bool, detail: impl Into<String>) -> Result<Option<String>> {
    Ok(if ok { None } else { Some(detail.into()) })
}

fn space(n: usize) -> Result<Arc<FeSpace>> {
    Ok(Arc::new(FeSpace::new(Arc::new(TriMesh::unit_square(n)?))?))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn smallest_mesh(_: u64) -> Result<Option<String>> {
    let m = TriMesh::unit_square(1)?;
    let r = m.refine_uniform();
    ensure(
        m.n_vertices() == 4
            && m.n_triangles() == 2
            && m.mesh_size() == 2.0_f64.sqrt()
            && r.n_triangles() == 8
            && r.mesh_size() == 0.5 * 2.0_f64.sqrt(),
        format!(
            "counts {} {} {} after refinement {} {}",
            m.n_vertices(),
            m.n_triangles(),
            m.mesh_size(),
            r.n_triangles(),
            r.mesh_size()
        ),
    )
}

fn unit_area(_: u64) -> Result<Option<String>> {
    let a = TriMesh::unit_square(4)?.total_area();
    ensure((a - 1.0).abs() <= 1e-12, format!("area {a}"))
}

fn stiffness_kernel_and_symmetry(_: u64) -> Result<Option<String>> {
    let full = FeSpace::without_dirichlet(Arc::new(TriMesh::unit_square(5)?))?;
    let k = assemble_stiffness(&full);
    let ones = vec![1.0; full.n_free()];
    let kernel = max_abs(&k.mul_vec(&ones));
    let mass_total: f64 = assemble_mass(&full).mul_vec(&ones).iter().sum();
    ensure(
        kernel <= 1e-13 && k.asymmetry() == 0.0 && (mass_total - 1.0).abs() <= 1e-13,
        format!("K·1 {kernel:e}, asymmetry {:e}, mass total {mass_total}", k.asymmetry()),
    )
}

fn zero_data(_: u64) -> Result<Option<String>> {
    let s = space(4)?;
    let load = assemble_load(&s, |_| 0.0, 3)?;
    let v = solve_operator_th(&s, 1.0, &load)?;
    let g = interpolate_nodal(&s, |_| 0.0)?;
    let n0 = [
        NormKind::L2,
        NormKind::H1Semi,
        NormKind::H1,
        NormKind::Lr(4.0),
        NormKind::W1r(3.0),
    ]
    .iter()
    .map(|&k| norm(&s, &g, k))
    .collect::<Result<Vec<_>>>()?;
    ensure(
        max_abs(&load) == 0.0 && max_abs(&v) == 0.0 && max_abs(&g) == 0.0 && n0.iter().all(|&x| x == 0.0),
        "zero data produced a nonzero result",
    )
}

fn linear_reproduction(_: u64) -> Result<Option<String>> {
    let full = FeSpace::without_dirichlet(Arc::new(TriMesh::unit_square(4)?))?;
    let plane = |p: Point| 1.0 + 2.0 * p.x - 3.0 * p.y;
    let u = interpolate_nodal(&full, plane)?;
    let err = error_vs_exact(&full, &u, plane, |_| Vec2::new(2.0, -3.0), NormKind::H1)?;
    let w12 = norm(&full, &u, NormKind::W1r(2.0))?;
    let h1 = norm(&full, &u, NormKind::H1)?;
    ensure(
        err <= 1e-12 && (w12 - h1).abs() <= 1e-12,
        format!("reproduction error {err:e}, W1,2 vs H1 {:e}", w12 - h1),
    )
}

fn hamiltonian_values(_: u64) -> Result<Option<String>> {
    let x = Point::origin();
    let e = HamiltonianModel::Eikonal;
    let z = Vec2::new(3.0, 4.0);
    let h = HamiltonianModel::huber(1.0)?;
    let ok = e.value(x, z) == 5.0
        && (e.clarke_selection(x, z) - Vec2::new(0.6, 0.8)).norm() <= 1e-15
        && h.value(x, Vec2::zeros()) == 0.0
        && h.hp(x, Vec2::zeros()) == Some(Vec2::zeros())
        && h.hp_clarke_selection(x, Vec2::zeros()) == Some(Mat2::identity())
        && mean_value_matrix(&HamiltonianModel::Zero, x, z, -z)? == Vec2::zeros();
    ensure(ok, "closed-form Hamiltonian values differ")
}

fn selection_fields(_: u64) -> Result<Option<String>> {
    let s = space(4)?;
    let zero = vec![0.0; s.n_free()];
    let at_kink = selection_field(&HamiltonianModel::Eikonal, &s, &zero);
    let full = FeSpace::without_dirichlet(Arc::new(TriMesh::unit_square(4)?))?;
    let ramp = interpolate_nodal(&full, |p| p.x)?;
    let smooth = selection_field(&HamiltonianModel::Eikonal, &full, &ramp);
    ensure(
        at_kink.iter().all(|v| *v == Vec2::zeros()) && smooth.iter().all(|v| (v - Vec2::x()).norm() <= 1e-14),
        "eikonal selections differ from the tie-break",
    )
}

fn zero_model_solvers(_: u64) -> Result<Option<String>> {
    let s = space(6)?;
    let f = |p: Point| p.x + 2.0 * p.y;
    let problem = HjProblem::new(Arc::clone(&s), HamiltonianModel::Zero, 1.0, f)?;
    let linear = solve_operator_th(&s, 1.0, problem.load())?;
    let r = max_abs(&hj_residual(&problem, &linear)?);
    let u0 = vec![0.0; s.n_free()];
    let newton = solve_newton(&problem, &u0, 1e-10, 10)?;
    let picard = solve_picard(&problem, &u0, 1e-10, 10, 1.0)?;
    let trivial = HjProblem::new(Arc::clone(&s), HamiltonianModel::Eikonal, 1.0, |_| 0.0)?;
    let r0 = max_abs(&hj_residual(&trivial, &u0)?);
    ensure(
        r <= 1e-10 && newton.iterations == 1 && picard.iterations == 1 && r0 == 0.0,
        format!(
            "residual {r:e}, newton {} picard {} iterations, trivial residual {r0:e}",
            newton.iterations, picard.iterations
        ),
    )
}

fn zero_mfg(_: u64) -> Result<Option<String>> {
    let s = space(5)?;
    let n = s.n_free();
    let zero = vec![0.0; n];
    let idle = MfgProblem::with_sources(
        Arc::clone(&s),
        HamiltonianModel::Zero,
        CouplingModel::zero(),
        1.0,
        zero.clone(),
        zero.clone(),
        zero.clone(),
    )?;
    let r = mfg_residual(&idle, &MfgState::zeros(n))?;
    let m0 = interpolate_nodal(&s, |p| 16.0 * p.x * (1.0 - p.x) * p.y * (1.0 - p.y))?;
    let decoupled = MfgProblem::new(
        Arc::clone(&s),
        HamiltonianModel::Zero,
        CouplingModel::zero(),
        2.0,
        m0.clone(),
    )?;
    let rep = mfg_newton(&decoupled, &decoupled.initial_state(), 1e-10, 10)?;
    let huber = MfgProblem::new(
        Arc::clone(&s),
        HamiltonianModel::huber(1.0)?,
        CouplingModel::zero(),
        1.0,
        m0,
    )?;
    let a = MfgState {
        u: vec![0.1; n],
        m: vec![0.3; n],
    };
    let b = MfgState {
        u: vec![0.1; n],
        m: vec![-2.0; n],
    };
    let (ra, rb) = (mfg_residual(&huber, &a)?, mfg_residual(&huber, &b)?);
    let bitwise = ra[..n].iter().zip(&rb[..n]).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(
        max_abs(&r) == 0.0 && rep.converged && rep.iterations == 1 && bitwise,
        format!(
            "idle residual {:e}, decoupled iterations {}, r_u independent of m: {bitwise}",
            max_abs(&r),
            rep.iterations
        ),
    )
}

fn monotonicity_verdicts(seed: u64) -> Result<Option<String>> {
    let s = space(4)?;
    let m = interpolate_nodal(&s, |_| 1.0)?;
    let plus = check_monotonicity(
        &CouplingModel::local(CouplingLaw::Linear(1.0)),
        &s,
        std::slice::from_ref(&m),
        seed,
    )?;
    let minus = check_monotonicity(&CouplingModel::local(CouplingLaw::Linear(-1.0)), &s, &[m], seed)?;
    ensure(
        plus.monotone && plus.margin > 0.0 && !minus.monotone,
        format!("margins {} and {}", plus.margin, minus.margin),
    )
}

fn diagnostic_equalities(_: u64) -> Result<Option<String>> {
    let grams = GramPair::identity(4, 4);
    let eye = DMatrix::<f64>::identity(4, 4);
    let id = banach_constant(&eye, &grams)?;
    let t = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.1 * (i + 2 * j) as f64 });
    let zero = perturbation_check(&t, &DMatrix::zeros(4, 4), &grams)?;
    let shrink = perturbation_check(&eye, &(-0.3 * &eye), &grams)?;
    ensure(
        (id - 1.0).abs() <= 1e-14 && zero.slack == 0.0 && (shrink.perturbed_constant - 0.7).abs() <= 1e-14,
        format!(
            "identity {id}, zero slack {:e}, shrunk constant {}",
            zero.slack, shrink.perturbed_constant
        ),
    )
}

fn rate_fits(_: u64) -> Result<Option<String>> {
    let hs = [0.5, 0.25, 0.125, 0.0625];
    let sq: Vec<f64> = hs.iter().map(|h| h * h).collect();
    let one = fit_rate(&hs, &hs)?.slope;
    let two = fit_rate(&hs, &sq)?.slope;
    ensure(
        (one - 1.0).abs() <= 1e-12 && (two - 2.0).abs() <= 1e-12,
        format!("slopes {one} and {two}"),
    )
}

fn large_reaction(_: u64) -> Result<Option<String>> {
    let s = space(8)?;
    let load = assemble_load(&s, |_| 1.0, 3)?;
    let v = solve_operator_th(&s, 1e8, &load)?;
    let peak = max_abs(&v);
    ensure(peak > 0.0 && peak < 10.0 / 1e8, format!("peak {peak:e}"))
}

const CHECKS: &[(&str, Check)] = &[
    ("smallest mesh and refinement", smallest_mesh),
    ("unit area", unit_area),
    ("stiffness kernel and symmetry", stiffness_kernel_and_symmetry),
    ("zero data", zero_data),
    ("linear reproduction", linear_reproduction),
    ("hamiltonian values", hamiltonian_values),
    ("selection fields", selection_fields),
    ("zero-model HJB solvers", zero_model_solvers),
    ("zero-model MFG", zero_mfg),
    ("monotonicity verdicts", monotonicity_verdicts),
    ("diagnostic equalities", diagnostic_equalities),
    ("rate fits", rate_fits),
    ("large reaction", large_reaction),
];

pub fn run(seed: u64) -> CliResult<()> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check(seed) {
            Ok(None) => println!("ok    {name}"),
            Ok(Some(detail)) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    println!("selftest: {} of {} checks passed", CHECKS.len() - failed, CHECKS.len());
    if failed > 0 {
        return Err(CliError::Failure(format!("{failed} self-test checks failed")));
    }
    Ok(())
}
