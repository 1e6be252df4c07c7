//! Manufactured solutions and mesh-refinement studies.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::diagnostics::{fit_rate, RateFit};
use crate::error::{Error, Result};
use crate::fem::{assemble_load, error_vs_exact, FeSpace, NormKind};
use crate::hamiltonian::{HamiltonianModel, Mat2, Vec2};
use crate::hj::{solve_newton, solve_picard, HjProblem, SolveReport};
use crate::mesh::{Point, TriMesh};
use crate::mfg::{mfg_newton, mfg_picard, CouplingKind, CouplingModel, MfgProblem, MfgState};

/// `sin(πx) sin(πy)` and its derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct SinSin;

impl SinSin {
    pub fn value(&self, p: Point) -> f64 {
        (PI * p.x).sin() * (PI * p.y).sin()
    }

    pub fn gradient(&self, p: Point) -> Vec2 {
        let (sx, cx) = (PI * p.x).sin_cos();
        let (sy, cy) = (PI * p.y).sin_cos();
        Vec2::new(PI * cx * sy, PI * sx * cy)
    }

    pub fn hessian(&self, p: Point) -> Mat2 {
        let (sx, cx) = (PI * p.x).sin_cos();
        let (sy, cy) = (PI * p.y).sin_cos();
        let pp = PI * PI;
        Mat2::new(-pp * sx * sy, pp * cx * cy, pp * cx * cy, -pp * sx * sy)
    }

    pub fn laplacian(&self, p: Point) -> f64 {
        -2.0 * PI * PI * self.value(p)
    }
}

/// HJB problem whose exact solution is `sin(πx) sin(πy)`.
pub fn manufactured_hj(space: Arc<FeSpace>, model: HamiltonianModel, lambda: f64) -> Result<HjProblem> {
    let s = SinSin;
    let m = model.clone();
    HjProblem::new(space, model, lambda, move |p| {
        -s.laplacian(p) + m.value(p, s.gradient(p)) + lambda * s.value(p)
    })
}

/// MFG problem with `u = m = sin(πx) sin(πy)`, `m0 = 0` and compensating
/// sources. Needs a local coupling, since the sources are evaluated
/// pointwise.
pub fn manufactured_mfg(
    space: Arc<FeSpace>,
    model: HamiltonianModel,
    coupling: CouplingModel,
    lambda: f64,
) -> Result<MfgProblem> {
    if coupling.kind != CouplingKind::Local {
        return Err(Error::invalid("manufactured mean field games need a local coupling"));
    }
    if !model.has_hp() {
        return Err(Error::invalid(format!("hamiltonian '{model}' has no H_p")));
    }
    let s = SinSin;
    let g_hjb = assemble_load(
        &space,
        |p| {
            let v = s.value(p);
            -s.laplacian(p) + model.value(p, s.gradient(p)) + lambda * v - coupling.law.value(p, v)
        },
        3,
    )?;
    let g_fp = assemble_load(
        &space,
        |p| {
            let du = s.gradient(p);
            let hp = model.hp(p, du).unwrap_or_default();
            let hpp = model.hp_clarke_selection(p, du).unwrap_or_default();
            // div(m H_p(Du)) = Dm · H_p + m tr(H_pp D²u)
            let div = du.dot(&hp) + s.value(p) * (hpp * s.hessian(p)).trace();
            -s.laplacian(p) - div + lambda * s.value(p)
        },
        3,
    )?;
    let n = space.n_free();
    MfgProblem::with_sources(space, model, coupling, lambda, vec![0.0; n], g_hjb, g_fp)
}

/// Nonlinear solver used by a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SolverKind {
    Newton,
    /// Relaxed fixed-point iteration with the given relaxation.
    Picard(f64),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StudyOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverKind,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            tol: 1e-10,
            max_iter: 100,
            solver: SolverKind::Newton,
        }
    }
}

/// Errors on one mesh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub dofs: usize,
    pub iterations: usize,
    pub final_residual: f64,
    pub errors: BTreeMap<String, f64>,
}

/// Rows sorted by decreasing `h` and fitted rates per error kind (present
/// with three or more rows).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub rates: BTreeMap<String, RateFit>,
}

impl ConvergenceReport {
    /// Sorts the rows and fits a rate for every error kind.
    pub fn from_rows(mut rows: Vec<ConvergenceRow>) -> Result<Self> {
        rows.sort_by(|a, b| b.h.total_cmp(&a.h));
        let mut rates = BTreeMap::new();
        if rows.len() >= 3 {
            let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
            for key in rows[0].errors.keys() {
                let errs: Vec<f64> = rows.iter().map(|r| r.errors[key]).collect();
                rates.insert(key.clone(), fit_rate(&hs, &errs)?);
            }
        }
        Ok(ConvergenceReport { rows, rates })
    }

    pub fn rate(&self, key: &str) -> Option<RateFit> {
        self.rates.get(key).copied()
    }

    pub fn errors(&self, key: &str) -> Vec<f64> {
        self.rows.iter().map(|r| r.errors[key]).collect()
    }
}

/// Structured meshes with `n` subdivisions per side for every level.
pub fn unit_square_family(levels: &[usize]) -> Result<Vec<Arc<TriMesh>>> {
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("mesh levels must be strictly increasing"));
    }
    levels.iter().map(|&n| TriMesh::unit_square(n).map(Arc::new)).collect()
}

fn ensure_converged<S>(report: &SolveReport<S>, solver: &'static str) -> Result<()> {
    if report.converged {
        Ok(())
    } else {
        Err(Error::NonConvergence {
            solver,
            iterations: report.iterations,
            residual: report.final_residual(),
        })
    }
}

/// Solves the discrete HJB problem on one mesh with the study's solver.
pub fn solve_hj(problem: &HjProblem, options: &StudyOptions) -> Result<SolveReport> {
    let u0 = vec![0.0; problem.space().n_free()];
    match options.solver {
        SolverKind::Newton => solve_newton(problem, &u0, options.tol, options.max_iter),
        SolverKind::Picard(theta) => solve_picard(problem, &u0, options.tol, options.max_iter, theta),
    }
}

/// Solves the discrete MFG system from the default initial guess.
pub fn solve_mfg(problem: &MfgProblem, options: &StudyOptions) -> Result<SolveReport<MfgState>> {
    let x0 = problem.initial_state();
    match options.solver {
        SolverKind::Newton => mfg_newton(problem, &x0, options.tol, options.max_iter),
        SolverKind::Picard(theta) => mfg_picard(problem, &x0, options.tol, options.max_iter, theta),
    }
}

/// H1 and L2 errors against `sin(πx) sin(πy)` on one mesh.
pub fn convergence_row_hj(
    mesh: &Arc<TriMesh>,
    model: &HamiltonianModel,
    lambda: f64,
    options: &StudyOptions,
) -> Result<ConvergenceRow> {
    let s = SinSin;
    let space = Arc::new(FeSpace::new(Arc::clone(mesh))?);
    let problem = manufactured_hj(Arc::clone(&space), model.clone(), lambda)?;
    let rep = solve_hj(&problem, options)?;
    ensure_converged(&rep, "HJB solver")?;
    let u = &rep.solution;
    let mut errors = BTreeMap::new();
    let value = |p| s.value(p);
    let grad = |p| s.gradient(p);
    errors.insert("h1".into(), error_vs_exact(&space, u, value, grad, NormKind::H1)?);
    errors.insert("l2".into(), error_vs_exact(&space, u, value, grad, NormKind::L2)?);
    Ok(ConvergenceRow {
        h: space.mesh_size(),
        dofs: space.n_free(),
        iterations: rep.iterations,
        final_residual: rep.final_residual(),
        errors,
    })
}

/// [`convergence_row_hj`] on every mesh.
pub fn convergence_study_hj(
    meshes: &[Arc<TriMesh>],
    model: &HamiltonianModel,
    lambda: f64,
    options: &StudyOptions,
) -> Result<ConvergenceReport> {
    let rows = meshes
        .iter()
        .map(|mesh| convergence_row_hj(mesh, model, lambda, options))
        .collect::<Result<Vec<_>>>()?;
    ConvergenceReport::from_rows(rows)
}

/// Errors of the manufactured MFG pair on one mesh: `u_h1`, `m_l2`, their
/// sum `h1_l2`, and `u_w1r`, `m_lr` and `w1r_lr` for the exponent `r`.
pub fn convergence_row_mfg(
    mesh: &Arc<TriMesh>,
    model: &HamiltonianModel,
    coupling: &CouplingModel,
    lambda: f64,
    r: f64,
    options: &StudyOptions,
) -> Result<ConvergenceRow> {
    let space = Arc::new(FeSpace::new(Arc::clone(mesh))?);
    let problem = manufactured_mfg(Arc::clone(&space), model.clone(), *coupling, lambda)?;
    let rep = solve_mfg(&problem, options)?;
    ensure_converged(&rep, "MFG solver")?;
    let errors = mfg_errors(&space, &rep.solution, r)?;
    Ok(ConvergenceRow {
        h: space.mesh_size(),
        dofs: 2 * space.n_free(),
        iterations: rep.iterations,
        final_residual: rep.final_residual(),
        errors,
    })
}

/// [`convergence_row_mfg`] on every mesh.
pub fn convergence_study_mfg(
    meshes: &[Arc<TriMesh>],
    model: &HamiltonianModel,
    coupling: &CouplingModel,
    lambda: f64,
    r: f64,
    options: &StudyOptions,
) -> Result<ConvergenceReport> {
    let rows = meshes
        .iter()
        .map(|mesh| convergence_row_mfg(mesh, model, coupling, lambda, r, options))
        .collect::<Result<Vec<_>>>()?;
    ConvergenceReport::from_rows(rows)
}

/// Error families of a discrete pair against `u = m = sin(πx) sin(πy)`.
pub fn mfg_errors(space: &FeSpace, state: &MfgState, r: f64) -> Result<BTreeMap<String, f64>> {
    let s = SinSin;
    let value = |p| s.value(p);
    let grad = |p| s.gradient(p);
    let u_h1 = error_vs_exact(space, &state.u, value, grad, NormKind::H1)?;
    let m_l2 = error_vs_exact(space, &state.m, value, grad, NormKind::L2)?;
    let u_w1r = error_vs_exact(space, &state.u, value, grad, NormKind::W1r(r))?;
    let m_lr = error_vs_exact(space, &state.m, value, grad, NormKind::Lr(r))?;
    Ok(BTreeMap::from([
        ("u_h1".to_string(), u_h1),
        ("m_l2".to_string(), m_l2),
        ("h1_l2".to_string(), u_h1 + m_l2),
        ("u_w1r".to_string(), u_w1r),
        ("m_lr".to_string(), m_lr),
        ("w1r_lr".to_string(), u_w1r + m_lr),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::interpolate_nodal;
    use crate::hj::hj_residual;
    use crate::mfg::{mfg_residual, CouplingLaw};

    #[test]
    fn sinsin_derivatives_match_differences() {
        let s = SinSin;
        let p = Point::new(0.3, 0.7);
        let e = 1e-5;
        let fd = Vec2::new(
            (s.value(Point::new(p.x + e, p.y)) - s.value(Point::new(p.x - e, p.y))) / (2.0 * e),
            (s.value(Point::new(p.x, p.y + e)) - s.value(Point::new(p.x, p.y - e))) / (2.0 * e),
        );
        assert!((fd - s.gradient(p)).norm() < 1e-8);
        let gx = (s.gradient(Point::new(p.x + e, p.y)) - s.gradient(Point::new(p.x - e, p.y))) / (2.0 * e);
        assert!((gx - s.hessian(p).column(0)).norm() < 1e-7);
        assert!((s.hessian(p).trace() - s.laplacian(p)).abs() < 1e-12);
    }

    #[test]
    fn interpolant_residuals_shrink_with_h() {
        let mut hj = Vec::new();
        let mut mfg = Vec::new();
        for n in [8, 16, 32] {
            let space = Arc::new(FeSpace::new(Arc::new(TriMesh::unit_square(n).unwrap())).unwrap());
            let iu = interpolate_nodal(&space, |p| SinSin.value(p)).unwrap();
            let p = manufactured_hj(space.clone(), HamiltonianModel::Eikonal, 1.0).unwrap();
            hj.push(p.dual_norm(&hj_residual(&p, &iu).unwrap()));
            let q = manufactured_mfg(
                space,
                HamiltonianModel::huber(1.0).unwrap(),
                CouplingModel::local(CouplingLaw::Linear(1.0)),
                1.0,
            )
            .unwrap();
            let state = MfgState { u: iu.clone(), m: iu };
            mfg.push(q.dual_norm(&mfg_residual(&q, &state).unwrap()));
        }
        for w in hj.windows(2).chain(mfg.windows(2)) {
            assert!(w[1] < 0.7 * w[0], "{w:?}");
        }
    }

    #[test]
    fn poisson_rates() {
        let meshes = unit_square_family(&[8, 16, 32]).unwrap();
        let rep = convergence_study_hj(&meshes, &HamiltonianModel::Zero, 0.0, &StudyOptions::default()).unwrap();
        let h1 = rep.rate("h1").unwrap().slope;
        let l2 = rep.rate("l2").unwrap().slope;
        assert!((0.9..=1.1).contains(&h1), "{h1}");
        assert!((1.8..=2.2).contains(&l2), "{l2}");
        assert!(rep.errors("h1").windows(2).all(|w| w[1] < w[0]));
        assert!(unit_square_family(&[8, 8]).is_err());
    }
}
