//! Stationary second-order mean field game system
//!
//! ```text
//! -Δu + H(x, Du) + λu = F[m] + g_hjb
//! -Δm - div(m H_p(x, Du)) + λm = λ m0 + g_fp
//! ```
//!
//! with homogeneous Dirichlet data for both unknowns, discretized by P1
//! elements and solved by block semismooth Newton or by alternating
//! fixed-point sweeps.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_element_matrices, assemble_element_vectors, assemble_mass, assemble_stiffness, assemble_weighted_mass,
    default_rule, shifted_stiffness, FeSpace, SolutionOperator,
};
use crate::hamiltonian::{HamiltonianModel, Mat2, Vec2};
use crate::hj::{advection_matrix, line_search, nonlinear_load, solve_newton, HjProblem, SolveReport};
use crate::linalg::{BandedLu, CsrMatrix, TripletBuilder};
use crate::mesh::Point;

/// Pointwise coupling law `f(x, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingLaw {
    Zero,
    /// `f = c m`; monotone for `c > 0`.
    Linear(f64),
    /// `f = atan(m)`.
    Arctan,
}

impl CouplingLaw {
    pub fn value(&self, _x: Point, m: f64) -> f64 {
        match self {
            CouplingLaw::Zero => 0.0,
            CouplingLaw::Linear(c) => c * m,
            CouplingLaw::Arctan => m.atan(),
        }
    }

    pub fn derivative(&self, _x: Point, m: f64) -> f64 {
        match self {
            CouplingLaw::Zero => 0.0,
            CouplingLaw::Linear(c) => *c,
            CouplingLaw::Arctan => 1.0 / (1.0 + m * m),
        }
    }

    /// Bound `C_F` on `|∂_m f|`.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            CouplingLaw::Zero => 0.0,
            CouplingLaw::Linear(c) => c.abs(),
            CouplingLaw::Arctan => 1.0,
        }
    }

    /// Whether `∂_m f` is positive everywhere (strictly monotone coupling).
    pub fn is_monotone(&self) -> bool {
        match self {
            CouplingLaw::Zero => false,
            CouplingLaw::Linear(c) => *c > 0.0,
            CouplingLaw::Arctan => true,
        }
    }
}

/// `F[m] = f(·, m)` or `F[m] = f(·, S m)` with `S` a discrete mollifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingKind {
    Local,
    /// `S = ((M_L + ε² K)^{-1} M_L)^passes` on the Dirichlet space.
    Nonlocal {
        width: f64,
        passes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingModel {
    pub law: CouplingLaw,
    pub kind: CouplingKind,
}

impl fmt::Display for CouplingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let law = match self.law {
            CouplingLaw::Zero => "zero".to_string(),
            CouplingLaw::Linear(1.0) => "linear".to_string(),
            CouplingLaw::Linear(c) => format!("linear:{c}"),
            CouplingLaw::Arctan => "arctan".to_string(),
        };
        match self.kind {
            CouplingKind::Local => write!(f, "local:{law}"),
            CouplingKind::Nonlocal { width, passes } => write!(f, "nonlocal:{law}@{width}x{passes}"),
        }
    }
}

impl CouplingModel {
    pub const DEFAULT_WIDTH: f64 = 0.1;
    pub const DEFAULT_PASSES: usize = 2;

    pub fn local(law: CouplingLaw) -> Self {
        CouplingModel {
            law,
            kind: CouplingKind::Local,
        }
    }

    pub fn nonlocal(law: CouplingLaw, width: f64, passes: usize) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() || passes == 0 {
            return Err(Error::invalid(format!(
                "smoothing needs positive width and passes, got {width} and {passes}"
            )));
        }
        Ok(CouplingModel {
            law,
            kind: CouplingKind::Nonlocal { width, passes },
        })
    }

    pub fn zero() -> Self {
        Self::local(CouplingLaw::Zero)
    }

    /// Parses `zero`, `local:<law>` or `nonlocal:<law>` where `<law>` is
    /// `zero`, `linear`, `linear:<c>` or `arctan`.
    pub fn parse(spec: &str) -> Result<Self> {
        if spec == "zero" {
            return Ok(Self::zero());
        }
        let bad = || Error::invalid(format!("unknown coupling '{spec}'"));
        let (kind, law) = spec.split_once(':').ok_or_else(bad)?;
        let law = match law.split_once(':') {
            None if law == "zero" => CouplingLaw::Zero,
            None if law == "linear" => CouplingLaw::Linear(1.0),
            None if law == "arctan" => CouplingLaw::Arctan,
            Some(("linear", c)) => {
                let c: f64 = c.trim().parse().map_err(|_| bad())?;
                if !c.is_finite() {
                    return Err(bad());
                }
                CouplingLaw::Linear(c)
            }
            _ => return Err(bad()),
        };
        match kind {
            "local" => Ok(Self::local(law)),
            "nonlocal" => Self::nonlocal(law, Self::DEFAULT_WIDTH, Self::DEFAULT_PASSES),
            _ => Err(bad()),
        }
    }
}

/// Coefficients of the pair `(u_h, m_h)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfgState {
    pub u: Vec<f64>,
    pub m: Vec<f64>,
}

impl MfgState {
    pub fn zeros(n: usize) -> Self {
        MfgState {
            u: vec![0.0; n],
            m: vec![0.0; n],
        }
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.u.clone();
        v.extend_from_slice(&self.m);
        v
    }

    pub fn from_stacked(v: &[f64]) -> Self {
        let n = v.len() / 2;
        MfgState {
            u: v[..n].to_vec(),
            m: v[n..].to_vec(),
        }
    }
}

/// Helmholtz smoother `(M_L + σK)^{-1} M_L` applied `passes` times.
#[derive(Debug, Clone)]
struct Smoother {
    operator: CsrMatrix,
    lumped: Vec<f64>,
    lu: BandedLu,
    passes: usize,
}

impl Smoother {
    fn new(space: &FeSpace, width: f64, passes: usize) -> Result<Self> {
        let lumped: Vec<f64> = {
            let m = assemble_mass(space);
            (0..m.nrows()).map(|i| m.row(i).map(|(_, v)| v).sum()).collect()
        };
        let k = assemble_stiffness(space);
        let mut b = TripletBuilder::new(k.nrows(), k.ncols());
        b.push_block(0, 0, &k, width * width);
        for (i, l) in lumped.iter().enumerate() {
            b.push(i, i, *l);
        }
        let operator = b.build();
        let lu = BandedLu::factor(&operator)?;
        Ok(Smoother {
            operator,
            lumped,
            lu,
            passes,
        })
    }

    /// All intermediate stages `w_1, ..., w_passes`.
    fn stages(&self, m: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.passes);
        let mut cur = m.to_vec();
        for _ in 0..self.passes {
            let rhs: Vec<f64> = cur.iter().zip(&self.lumped).map(|(a, l)| a * l).collect();
            cur = self.lu.solve(&rhs);
            out.push(cur.clone());
        }
        out
    }

    fn apply(&self, m: &[f64]) -> Vec<f64> {
        self.stages(m).pop().unwrap_or_else(|| m.to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct MfgProblem {
    space: Arc<FeSpace>,
    model: HamiltonianModel,
    coupling: CouplingModel,
    lambda: f64,
    m0: Vec<f64>,
    g_hjb: Vec<f64>,
    g_fp: Vec<f64>,
    manufactured: bool,
    system: CsrMatrix,
    mass: CsrMatrix,
    density_source: Vec<f64>,
    dual: Arc<SolutionOperator>,
    smoother: Option<Arc<Smoother>>,
}

impl MfgProblem {
    /// Problem with initial density coefficients `m0`, which must be
    /// nodally nonnegative and not identically zero.
    pub fn new(
        space: Arc<FeSpace>,
        model: HamiltonianModel,
        coupling: CouplingModel,
        lambda: f64,
        m0: Vec<f64>,
    ) -> Result<Self> {
        if m0.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("initial density must be nonnegative"));
        }
        if m0.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("initial density must not vanish identically"));
        }
        let n = m0.len();
        Self::build(space, model, coupling, lambda, m0, vec![0.0; n], vec![0.0; n], false)
    }

    /// Problem with additional load vectors `∫ g_hjb φ_i` and `∫ g_fp ψ_i`;
    /// the sign of `m0` is not restricted.
    pub fn with_sources(
        space: Arc<FeSpace>,
        model: HamiltonianModel,
        coupling: CouplingModel,
        lambda: f64,
        m0: Vec<f64>,
        g_hjb: Vec<f64>,
        g_fp: Vec<f64>,
    ) -> Result<Self> {
        Self::build(space, model, coupling, lambda, m0, g_hjb, g_fp, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        space: Arc<FeSpace>,
        model: HamiltonianModel,
        coupling: CouplingModel,
        lambda: f64,
        m0: Vec<f64>,
        g_hjb: Vec<f64>,
        g_fp: Vec<f64>,
        manufactured: bool,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "reaction coefficient must be > 0, got {lambda}"
            )));
        }
        if !model.has_hp() {
            return Err(Error::invalid(format!("hamiltonian '{model}' has no H_p")));
        }
        space.check_len(&m0)?;
        space.check_len(&g_hjb)?;
        space.check_len(&g_fp)?;
        let system = shifted_stiffness(&space, lambda);
        let mass = assemble_mass(&space);
        let density_source = mass.mul_vec(&m0).iter().map(|v| lambda * v).collect();
        let dual = Arc::new(SolutionOperator::new(&space, 1.0)?);
        let smoother = match coupling.kind {
            CouplingKind::Local => None,
            CouplingKind::Nonlocal { width, passes } => Some(Arc::new(Smoother::new(&space, width, passes)?)),
        };
        Ok(MfgProblem {
            space,
            model,
            coupling,
            lambda,
            m0,
            g_hjb,
            g_fp,
            manufactured,
            system,
            mass,
            density_source,
            dual,
            smoother,
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

    pub fn coupling(&self) -> &CouplingModel {
        &self.coupling
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m0(&self) -> &[f64] {
        &self.m0
    }

    pub fn is_manufactured(&self) -> bool {
        self.manufactured
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// `K + λM`.
    pub fn linear_part(&self) -> &CsrMatrix {
        &self.system
    }

    /// Default initial guess `(0, m0)`.
    pub fn initial_state(&self) -> MfgState {
        MfgState {
            u: vec![0.0; self.space.n_free()],
            m: self.m0.clone(),
        }
    }

    /// Stacked dual norm `sqrt(|r_u|^2 + |r_m|^2)`, both in `(K+M)^{-1}`.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        let n = self.space.n_free();
        self.dual.dual_norm(&r[..n]).hypot(self.dual.dual_norm(&r[n..]))
    }

    /// The density seen by the coupling: `m` itself or its smoothed version.
    pub fn coupled_density(&self, m: &[f64]) -> Vec<f64> {
        match &self.smoother {
            None => m.to_vec(),
            Some(s) => s.apply(m),
        }
    }

    /// `∫ F[m] φ_i`.
    pub fn coupling_load(&self, m: &[f64]) -> Result<Vec<f64>> {
        let mt = self.coupled_density(m);
        let law = self.coupling.law;
        let space = &self.space;
        let rule = default_rule();
        assemble_element_vectors(space, |t| {
            let area = space.element(t).area;
            let vals = space.local_values(t, &mt);
            let mut fe = [0.0; 3];
            for (l, w) in rule {
                let x = space.map_point(t, l);
                let mv = l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2];
                let f = law.value(x, mv);
                if !f.is_finite() {
                    return Err(Error::NonFinite {
                        what: "coupling",
                        x: x.x,
                        y: x.y,
                    });
                }
                for a in 0..3 {
                    fe[a] += w * area * f * l[a];
                }
            }
            Ok(fe)
        })
    }

    /// `W_ij = ∫ ∂_m f(x, m_h) φ_j φ_i` at the coupled density `mt`.
    fn coupling_derivative_mass(&self, mt: &[f64]) -> CsrMatrix {
        let law = self.coupling.law;
        let space = &self.space;
        assemble_weighted_mass(space, |t, l, x| {
            let vals = space.local_values(t, mt);
            law.derivative(x, l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2])
        })
    }

    /// Per-element `H_p(centroid, Du_h)`.
    pub fn hp_field(&self, u: &[f64]) -> Vec<Vec2> {
        (0..self.space.n_elements())
            .map(|t| {
                let hp = self.model.hp(self.space.element(t).centroid, self.space.gradient(t, u));
                hp.expect("checked on construction")
            })
            .collect()
    }

    /// Per-element selection of the Clarke Jacobian of `H_p`.
    pub fn hp_selection_field(&self, u: &[f64]) -> Vec<Mat2> {
        (0..self.space.n_elements())
            .map(|t| {
                let xi = self
                    .model
                    .hp_clarke_selection(self.space.element(t).centroid, self.space.gradient(t, u));
                xi.expect("checked on construction")
            })
            .collect()
    }

    /// HJB problem for fixed `m`.
    fn hjb_for_density(&self, m: &[f64]) -> Result<HjProblem> {
        let mut load = self.coupling_load(m)?;
        for (l, g) in load.iter_mut().zip(&self.g_hjb) {
            *l += g;
        }
        HjProblem::with_load(self.space_arc(), self.model.clone(), self.lambda, load)
    }

    /// Block Jacobian at `state` with the model's selection.
    pub fn jacobian(&self, state: &MfgState) -> Result<MfgJacobian> {
        self.jacobian_with_selection(state, &self.hp_selection_field(&state.u))
    }

    /// Block Jacobian at `state` for a prescribed per-element selection
    /// `ξ_T` of the generalized Jacobian of `H_p`:
    ///
    /// ```text
    /// [ K + λM + B    -W S ]
    /// [ D(m, ξ)   K + λM + Bᵀ ]
    /// ```
    ///
    /// with `B_ij = ∫ H_p·∇φ_j φ_i`, `W` the `∂_m f`-weighted mass matrix,
    /// `S` the smoother (identity for local couplings) and
    /// `D_ij = ∫ m (ξ ∇φ_j)·∇ψ_i`. For nonlocal couplings the smoother
    /// stages are kept as auxiliary unknowns so the system stays sparse.
    pub fn jacobian_with_selection(&self, state: &MfgState, xi: &[Mat2]) -> Result<MfgJacobian> {
        let space = &self.space;
        let n = space.n_free();
        space.check_len(&state.u)?;
        space.check_len(&state.m)?;
        if xi.len() != space.n_elements() {
            return Err(Error::DimensionMismatch {
                expected: space.n_elements(),
                found: xi.len(),
            });
        }
        let b = advection_matrix(space, &self.hp_field(&state.u));
        let a11 = self.system.linear_combination(1.0, &b, 1.0)?;
        let a22 = self.system.linear_combination(1.0, &b.transpose(), 1.0)?;
        let d = assemble_element_matrices(space, |t| {
            let e = space.element(t);
            let vals = space.local_values(t, &state.m);
            let mbar = (vals[0] + vals[1] + vals[2]) / 3.0;
            let mut ke = [[0.0; 3]; 3];
            for (j, gj) in e.grads.iter().enumerate() {
                let flux = xi[t] * gj;
                for (i, gi) in e.grads.iter().enumerate() {
                    ke[i][j] = e.area * mbar * flux.dot(gi);
                }
            }
            ke
        });
        let stages = self.smoother.as_ref().map(|s| s.stages(&state.m));
        let mt = match &stages {
            Some(st) => st.last().cloned().unwrap_or_else(|| state.m.clone()),
            None => state.m.clone(),
        };
        let w = self.coupling_derivative_mass(&mt);
        let passes = stages.as_ref().map_or(0, |s| s.len());
        let total = (2 + passes) * n;
        let mut tb = TripletBuilder::with_capacity(total, total, 2 * a11.nnz() + 2 * d.nnz() + passes * 2 * n * 7);
        tb.push_block(0, 0, &a11, 1.0);
        tb.push_block(n, 0, &d, 1.0);
        tb.push_block(n, n, &a22, 1.0);
        match &self.smoother {
            None => tb.push_block(0, n, &w, -1.0),
            Some(s) => {
                // rows of stage k: (M_L + σK) w_k - M_L w_{k-1} = 0, w_0 = m
                for k in 0..passes {
                    let row = (2 + k) * n;
                    let prev = if k == 0 { n } else { (1 + k) * n };
                    tb.push_block(row, row, &s.operator, 1.0);
                    for (i, l) in s.lumped.iter().enumerate() {
                        tb.push(row + i, prev + i, -l);
                    }
                }
                tb.push_block(0, (1 + passes) * n, &w, -1.0);
            }
        }
        let matrix = tb.build();
        let lu = BandedLu::factor(&matrix)?;
        Ok(MfgJacobian {
            matrix,
            lu,
            n_state: 2 * n,
            smoother: self.smoother.clone(),
        })
    }
}

/// Factorized block Jacobian acting on stacked `(u, m)` vectors.
#[derive(Debug, Clone)]
pub struct MfgJacobian {
    matrix: CsrMatrix,
    lu: BandedLu,
    n_state: usize,
    smoother: Option<Arc<Smoother>>,
}

impl MfgJacobian {
    /// Full sparse matrix including auxiliary smoother rows, if any.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    fn padded(&self, rhs: &[f64]) -> Vec<f64> {
        let mut full = rhs.to_vec();
        full.resize(self.matrix.nrows(), 0.0);
        full
    }

    /// `J x` on the stacked state, with auxiliary stages eliminated.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let Some(s) = &self.smoother else {
            return self.matrix.mul_vec(x);
        };
        let mut full = x.to_vec();
        for stage in s.stages(&x[self.n_state / 2..]) {
            full.extend(stage);
        }
        let mut y = self.matrix.mul_vec(&full);
        y.truncate(self.n_state);
        y
    }

    /// `J^{-1} r` on the stacked state.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let mut x = self.lu.solve(&self.padded(r));
        x.truncate(self.n_state);
        x
    }

    /// `J^{-T} r` on the stacked state.
    pub fn solve_transpose(&self, r: &[f64]) -> Vec<f64> {
        let mut x = self.lu.solve_transpose(&self.padded(r));
        x.truncate(self.n_state);
        x
    }
}

/// Stacked residual `(r_u, r_m)`:
///
/// ```text
/// r_u_i = ∫ Du·∇φ_i + H(x, Du) φ_i + λ u φ_i - F[m] φ_i - g_hjb φ_i
/// r_m_i = ∫ Dm·∇ψ_i + m H_p(x, Du)·∇ψ_i + λ m ψ_i - λ m0 ψ_i - g_fp ψ_i
/// ```
pub fn mfg_residual(problem: &MfgProblem, state: &MfgState) -> Result<Vec<f64>> {
    let space = &problem.space;
    space.check_len(&state.u)?;
    space.check_len(&state.m)?;
    let n = space.n_free();
    let mut r = vec![0.0; 2 * n];
    let nl = nonlinear_load(space, &problem.model, &state.u)?;
    let fm = problem.coupling_load(&state.m)?;
    let au = problem.system.mul_vec(&state.u);
    for i in 0..n {
        r[i] = au[i] + nl[i] - fm[i] - problem.g_hjb[i];
    }
    let transport = advection_matrix(space, &problem.hp_field(&state.u)).transpose();
    let am = problem.system.mul_vec(&state.m);
    let tm = transport.mul_vec(&state.m);
    for i in 0..n {
        r[n + i] = am[i] + tm[i] - problem.density_source[i] - problem.g_fp[i];
    }
    if let Some(i) = r.iter().position(|v| !v.is_finite()) {
        let p = space.mesh().vertices()[space.vertex_of_dof(i % n)];
        return Err(Error::NonFinite {
            what: "mean field game residual",
            x: p.x,
            y: p.y,
        });
    }
    Ok(r)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Damped block semismooth Newton on the stacked residual.
pub fn mfg_newton(problem: &MfgProblem, state0: &MfgState, tol: f64, max_iter: usize) -> Result<SolveReport<MfgState>> {
    check_tol(tol)?;
    let mut x = state0.clone();
    let mut r = mfg_residual(problem, &x)?;
    let mut nr = problem.dual_norm(&r);
    let mut history = vec![nr];
    let mut iterations = 0;
    while nr > tol && iterations < max_iter {
        let step = problem.jacobian(&x)?.solve(&r);
        let n = problem.space.n_free();
        let found = line_search(nr, |s| {
            let trial = MfgState {
                u: x.u.iter().zip(&step[..n]).map(|(a, d)| a - s * d).collect(),
                m: x.m.iter().zip(&step[n..]).map(|(a, d)| a - s * d).collect(),
            };
            let rt = mfg_residual(problem, &trial)?;
            let nt = problem.dual_norm(&rt);
            Ok((trial, rt, nt))
        })?;
        let Some((trial, rt, nt)) = found else {
            return Ok(SolveReport {
                iterations,
                residual_history: history,
                converged: false,
                solution: x,
            });
        };
        x = trial;
        r = rt;
        nr = nt;
        history.push(nr);
        iterations += 1;
    }
    Ok(SolveReport {
        iterations,
        residual_history: history,
        converged: nr <= tol,
        solution: x,
    })
}

/// Alternating sweeps: Newton solve of the HJB equation for the current
/// density, linear solve of the Fokker-Planck equation for the new value
/// function, then `m ← (1-θ) m + θ m_new`.
pub fn mfg_picard(
    problem: &MfgProblem,
    state0: &MfgState,
    tol: f64,
    max_iter: usize,
    theta: f64,
) -> Result<SolveReport<MfgState>> {
    check_tol(tol)?;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("relaxation must lie in (0, 1], got {theta}")));
    }
    let mut x = state0.clone();
    let mut nr = problem.dual_norm(&mfg_residual(problem, &x)?);
    let mut history = vec![nr];
    let mut iterations = 0;
    let inner_tol = (0.01 * tol).max(1e-15);
    while nr > tol && iterations < max_iter {
        let hjb = problem.hjb_for_density(&x.m)?;
        let inner = solve_newton(&hjb, &x.u, inner_tol, 100)?;
        if !inner.converged {
            return Err(Error::NonConvergence {
                solver: "inner HJB Newton",
                iterations: inner.iterations,
                residual: inner.final_residual(),
            });
        }
        x.u = inner.solution;
        let transport = advection_matrix(&problem.space, &problem.hp_field(&x.u)).transpose();
        let fp = problem.system.linear_combination(1.0, &transport, 1.0)?;
        let rhs: Vec<f64> = problem
            .density_source
            .iter()
            .zip(&problem.g_fp)
            .map(|(a, b)| a + b)
            .collect();
        let m_new = BandedLu::factor(&fp)?.solve(&rhs);
        for (mi, ni) in x.m.iter_mut().zip(&m_new) {
            *mi = (1.0 - theta) * *mi + theta * ni;
        }
        nr = problem.dual_norm(&mfg_residual(problem, &x)?);
        history.push(nr);
        iterations += 1;
        if !nr.is_finite() {
            break;
        }
    }
    Ok(SolveReport {
        iterations,
        residual_history: history,
        converged: nr <= tol,
        solution: x,
    })
}

/// Result of the discrete monotonicity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub monotone: bool,
    /// Smallest eigenvalue of `W(m) = (∫ ∂_m f(x, m) φ_j φ_i)` over the
    /// sampled densities.
    pub margin: f64,
    /// Smallest Rayleigh quotient `ρᵀWρ / ρᵀρ` over the random directions.
    pub sampled_min: f64,
}

/// Checks `∫ ∂_m f(x, m) ρ² > 0` on the given densities through the
/// spectrum of the weighted mass matrix, plus 100 random directions `ρ`
/// per density drawn from a seeded generator.
pub fn check_monotonicity(
    coupling: &CouplingModel,
    space: &FeSpace,
    samples: &[Vec<f64>],
    seed: u64,
) -> Result<MonotonicityReport> {
    if coupling.kind != CouplingKind::Local {
        return Err(Error::invalid("monotonicity check needs a local coupling"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("monotonicity check needs at least one density sample"));
    }
    let law = coupling.law;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margin = f64::INFINITY;
    let mut sampled_min = f64::INFINITY;
    for m in samples {
        space.check_len(m)?;
        let w = assemble_weighted_mass(space, |t, l, x| {
            let vals = space.local_values(t, m);
            law.derivative(x, l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2])
        });
        let dense: DMatrix<f64> = w.to_dense();
        let eig = SymmetricEigen::try_new(dense, 1e-14, 10_000)
            .ok_or_else(|| Error::Eigen("weighted mass spectrum did not converge".into()))?;
        margin = margin.min(eig.eigenvalues.min());
        for _ in 0..100 {
            let rho: Vec<f64> = (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rr: f64 = rho.iter().map(|v| v * v).sum();
            if rr > 0.0 {
                sampled_min = sampled_min.min(w.bilinear(&rho, &rho) / rr);
            }
        }
    }
    Ok(MonotonicityReport {
        monotone: margin > 0.0,
        margin,
        sampled_min,
    })
}
