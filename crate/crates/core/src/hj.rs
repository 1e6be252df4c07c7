//! Galerkin discretization of `-Δu + H(x, Du) + λu = f` with homogeneous
//! Dirichlet data, solved by semismooth Newton or damped Picard iteration.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_element_matrices, assemble_load, default_rule, shifted_stiffness, FeSpace, SolutionOperator,
};
use crate::hamiltonian::{selection_field, HamiltonianModel, Vec2};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::mesh::Point;

/// Outcome of a nonlinear solve. `residual_history[k]` is the dual norm of
/// the residual at iterate `k`.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<S = Vec<f64>> {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub solution: S,
}

impl<S> SolveReport<S> {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::INFINITY)
    }
}

/// Damping factors tried by the Newton line search: `1, 1/2, ..., 2^-10`.
pub(crate) const MAX_HALVINGS: i32 = 10;

#[derive(Debug, Clone)]
pub struct HjProblem {
    space: Arc<FeSpace>,
    model: HamiltonianModel,
    lambda: f64,
    load: Vec<f64>,
    system: CsrMatrix,
    dual: Arc<SolutionOperator>,
}

impl HjProblem {
    /// Problem with right-hand side `f`, integrated by the order-3 rule.
    pub fn new<F>(space: Arc<FeSpace>, model: HamiltonianModel, lambda: f64, f: F) -> Result<Self>
    where
        F: Fn(Point) -> f64,
    {
        let load = assemble_load(&space, f, 3)?;
        Self::with_load(space, model, lambda, load)
    }

    /// Problem with a precomputed load vector `∫ f φ_i`.
    pub fn with_load(space: Arc<FeSpace>, model: HamiltonianModel, lambda: f64, load: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "reaction coefficient must be >= 0, got {lambda}"
            )));
        }
        space.check_len(&load)?;
        let system = shifted_stiffness(&space, lambda);
        let dual = Arc::new(SolutionOperator::new(&space, 1.0)?);
        Ok(HjProblem {
            space,
            model,
            lambda,
            load,
            system,
            dual,
        })
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    pub fn space_arc(&self) -> Arc<FeSpace> {
        Arc::clone(&self.space)
    }

    pub fn model(&self) -> &HamiltonianModel {
        &self.model
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// `K + λM`.
    pub fn linear_part(&self) -> &CsrMatrix {
        &self.system
    }

    /// `sqrt(r^T (K + M)^{-1} r)`, independent of `λ`.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        self.dual.dual_norm(r)
    }

    /// Newton matrix `K + λM + C(ξ)` at `u` for the model's selection.
    pub fn jacobian(&self, u: &[f64]) -> Result<CsrMatrix> {
        let xi = selection_field(&self.model, &self.space, u);
        self.system
            .linear_combination(1.0, &advection_matrix(&self.space, &xi), 1.0)
    }
}

/// `∫ H(x, Du_h) φ_i` with `Du_h` constant per element and the order-3 rule
/// in `x`.
pub fn nonlinear_load(space: &FeSpace, model: &HamiltonianModel, u: &[f64]) -> Result<Vec<f64>> {
    let rule = default_rule();
    crate::fem::assemble_element_vectors(space, |t| {
        let area = space.element(t).area;
        let du = space.gradient(t, u);
        let mut fe = [0.0; 3];
        for (l, w) in rule {
            let x = space.map_point(t, l);
            let h = model.value(x, du);
            if !h.is_finite() {
                return Err(Error::NonFinite {
                    what: "hamiltonian",
                    x: x.x,
                    y: x.y,
                });
            }
            for a in 0..3 {
                fe[a] += w * area * h * l[a];
            }
        }
        Ok(fe)
    })
}

/// `C_ij = ∫ (b_T · ∇φ_j) φ_i` for a field `b` constant per element.
pub fn advection_matrix(space: &FeSpace, field: &[Vec2]) -> CsrMatrix {
    assemble_element_matrices(space, |t| {
        let e = space.element(t);
        let mut ke = [[0.0; 3]; 3];
        for b in 0..3 {
            let c = e.area * field[t].dot(&e.grads[b]) / 3.0;
            for row in ke.iter_mut() {
                row[b] = c;
            }
        }
        ke
    })
}

/// `r_i = ∫ Du_h·∇φ_i + H(x, Du_h) φ_i + λ u_h φ_i - f φ_i`.
pub fn hj_residual(problem: &HjProblem, u: &[f64]) -> Result<Vec<f64>> {
    problem.space.check_len(u)?;
    let mut r = nonlinear_load(&problem.space, &problem.model, u)?;
    let au = problem.system.mul_vec(u);
    for ((ri, ai), bi) in r.iter_mut().zip(&au).zip(&problem.load) {
        *ri += ai - bi;
    }
    Ok(r)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Semismooth Newton with backtracking on the dual residual norm. The
/// iteration stops early with `converged = false` when no damping factor
/// down to `2^-10` decreases the residual.
pub fn solve_newton(problem: &HjProblem, u0: &[f64], tol: f64, max_iter: usize) -> Result<SolveReport> {
    check_tol(tol)?;
    let mut u = u0.to_vec();
    let mut r = hj_residual(problem, &u)?;
    let mut nr = problem.dual_norm(&r);
    let mut history = vec![nr];
    let mut iterations = 0;
    while nr > tol && iterations < max_iter {
        let j = problem.jacobian(&u)?;
        let step = BandedLu::factor(&j)?.solve(&r);
        let Some((trial, rt, nt)) = line_search(nr, |s| {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, d)| a - s * d).collect();
            let rt = hj_residual(problem, &trial)?;
            let nt = problem.dual_norm(&rt);
            Ok((trial, rt, nt))
        })?
        else {
            return Ok(SolveReport {
                iterations,
                residual_history: history,
                converged: false,
                solution: u,
            });
        };
        u = trial;
        r = rt;
        nr = nt;
        history.push(nr);
        iterations += 1;
    }
    Ok(SolveReport {
        iterations,
        residual_history: history,
        converged: nr <= tol,
        solution: u,
    })
}

/// Tries `s = 1, 1/2, ...` and returns the first trial whose norm is below
/// `current`.
pub(crate) fn line_search<T, F>(current: f64, mut trial: F) -> Result<Option<(T, Vec<f64>, f64)>>
where
    F: FnMut(f64) -> Result<(T, Vec<f64>, f64)>,
{
    for k in 0..=MAX_HALVINGS {
        let s = 0.5f64.powi(k);
        let (x, r, n) = trial(s)?;
        if n < current {
            return Ok(Some((x, r, n)));
        }
    }
    Ok(None)
}

/// Relaxed fixed-point iteration `u ← (1-θ)u + θ T_h(f - H(·, Du))`.
/// Exhausting `max_iter` is reported through `converged = false`.
pub fn solve_picard(problem: &HjProblem, u0: &[f64], tol: f64, max_iter: usize, theta: f64) -> Result<SolveReport> {
    check_tol(tol)?;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("relaxation must lie in (0, 1], got {theta}")));
    }
    let lu = BandedLu::factor(&problem.system)?;
    let mut u = u0.to_vec();
    let mut nr = problem.dual_norm(&hj_residual(problem, &u)?);
    let mut history = vec![nr];
    let mut iterations = 0;
    while nr > tol && iterations < max_iter {
        let nl = nonlinear_load(&problem.space, &problem.model, &u)?;
        let rhs: Vec<f64> = problem.load.iter().zip(&nl).map(|(b, n)| b - n).collect();
        let next = lu.solve(&rhs);
        for (ui, ni) in u.iter_mut().zip(&next) {
            *ui = (1.0 - theta) * *ui + theta * ni;
        }
        nr = problem.dual_norm(&hj_residual(problem, &u)?);
        if !nr.is_finite() {
            history.push(nr);
            iterations += 1;
            break;
        }
        history.push(nr);
        iterations += 1;
    }
    Ok(SolveReport {
        iterations,
        residual_history: history,
        converged: nr <= tol,
        solution: u,
    })
}
