//! Gram-weighted singular values of discrete linear operators, the
//! perturbation inequality for Banach constants, stability scans of the
//! linearized mean field game operator and convergence-rate fitting.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::assemble_stiffness;
use crate::hamiltonian::Mat2;
use crate::linalg::{dot, BandedLu, CsrMatrix, TripletBuilder};
use crate::mfg::{MfgProblem, MfgState};

/// Inner products on the domain (`gram_x`) and range (`gram_y`).
#[derive(Debug, Clone)]
pub struct GramPair {
    gram_x: DMatrix<f64>,
    gram_y: DMatrix<f64>,
    chol_x: DMatrix<f64>,
    chol_y: DMatrix<f64>,
}

impl GramPair {
    pub fn new(gram_x: DMatrix<f64>, gram_y: DMatrix<f64>) -> Result<Self> {
        let chol = |g: &DMatrix<f64>, which: &str| -> Result<DMatrix<f64>> {
            if !g.is_square() || (g - g.transpose()).amax() > 1e-12 * g.amax().max(1.0) {
                return Err(Error::invalid(format!("{which} gram matrix must be symmetric")));
            }
            g.clone()
                .cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::invalid(format!("{which} gram matrix is not positive definite")))
        };
        let chol_x = chol(&gram_x, "domain")?;
        let chol_y = chol(&gram_y, "range")?;
        Ok(GramPair {
            gram_x,
            gram_y,
            chol_x,
            chol_y,
        })
    }

    pub fn identity(n_domain: usize, n_range: usize) -> Self {
        GramPair::new(
            DMatrix::identity(n_domain, n_domain),
            DMatrix::identity(n_range, n_range),
        )
        .expect("identity is SPD")
    }

    pub fn gram_x(&self) -> &DMatrix<f64> {
        &self.gram_x
    }

    pub fn gram_y(&self) -> &DMatrix<f64> {
        &self.gram_y
    }

    /// `L_Yᵀ A L_X^{-T}`, whose Euclidean singular values are the weighted
    /// singular values of `A`.
    fn whiten(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != self.gram_y.nrows() || a.ncols() != self.gram_x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.gram_y.nrows() * self.gram_x.nrows(),
                found: a.nrows() * a.ncols(),
            });
        }
        let left = self.chol_y.transpose() * a;
        // solve X L_Xᵀ = left, i.e. L_X Xᵀ = leftᵀ
        let xt = self
            .chol_x
            .solve_lower_triangular(&left.transpose())
            .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
        Ok(xt.transpose())
    }
}

/// Extreme singular value of `b` from the eigenproblem of `bᵀb`, refined
/// by the Rayleigh value `|b x|` of the unit eigenvector.
fn extreme_singular_value(b: &DMatrix<f64>, smallest: bool) -> Result<f64> {
    if b.ncols() == 0 {
        return Ok(0.0);
    }
    let btb = b.transpose() * b;
    let eig = SymmetricEigen::try_new(btb, 1e-15, 100_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let idx = if smallest {
        eig.eigenvalues.imin()
    } else {
        eig.eigenvalues.imax()
    };
    let x = eig.eigenvectors.column(idx);
    Ok((b * x).norm() / x.norm())
}

/// Smallest Gram-weighted singular value
/// `min_x |A x|_Y / |x|_X`, the finite-dimensional Banach constant.
pub fn banach_constant(a: &DMatrix<f64>, grams: &GramPair) -> Result<f64> {
    if a.nrows() < a.ncols() {
        return Ok(0.0);
    }
    extreme_singular_value(&grams.whiten(a)?, true)
}

/// `max_x |A x|_Y / |x|_X`.
pub fn operator_norm(a: &DMatrix<f64>, grams: &GramPair) -> Result<f64> {
    extreme_singular_value(&grams.whiten(a)?, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub constant: f64,
    pub perturbation_norm: f64,
    pub perturbed_constant: f64,
    /// `c(T+S) - (c(T) - |S|)`, nonnegative when the inequality holds.
    pub slack: f64,
    pub holds: bool,
}

/// Checks `c(T + S) ≥ c(T) - |S|` up to `1e-12`.
pub fn perturbation_check(t: &DMatrix<f64>, s: &DMatrix<f64>, grams: &GramPair) -> Result<PerturbationReport> {
    if t.shape() != s.shape() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            found: s.len(),
        });
    }
    let c1 = banach_constant(t, grams)?;
    let op = operator_norm(s, grams)?;
    let c2 = banach_constant(&(t + s), grams)?;
    let slack = c2 - (c1 - op);
    Ok(PerturbationReport {
        constant: c1,
        perturbation_norm: op,
        perturbed_constant: c2,
        slack,
        holds: slack >= -1e-12,
    })
}

/// Largest eigenvalue of an operator that is self-adjoint and positive
/// semidefinite in the inner product `<x, y> = xᵀ G y`, by Lanczos with
/// full reorthogonalization.
pub fn lanczos_largest<F>(op: F, gram: &CsrMatrix, start: Vec<f64>, max_steps: usize, rel_tol: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = start.len();
    let inner = |x: &[f64], y: &[f64]| dot(x, &gram.mul_vec(y));
    let mut v = start;
    let nv = inner(&v, &v).sqrt();
    if !(nv > 0.0) {
        return Err(Error::invalid("Lanczos start vector must be nonzero"));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = f64::NAN;
    for step in 0..max_steps.min(n) {
        let mut w = op(&basis[step]);
        let alpha = inner(&basis[step], &w);
        alphas.push(alpha);
        // two passes of Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for q in &basis {
                let c = inner(q, &w);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let k = alphas.len();
        let t = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let ritz = SymmetricEigen::new(t).eigenvalues.max();
        let beta = inner(&w, &w).max(0.0).sqrt();
        let settled = (ritz - last).abs() <= rel_tol * ritz.abs();
        last = ritz;
        if settled || beta <= 1e-14 * ritz.abs().max(f64::MIN_POSITIVE) {
            return Ok(ritz);
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    Ok(last)
}

/// One `(h, sample, smin)` record of a stability scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanEntry {
    pub h: f64,
    pub sample: usize,
    pub smin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityScanReport {
    pub entries: Vec<ScanEntry>,
    /// Minimum over samples, one value per level in input order.
    pub level_min: Vec<f64>,
    pub overall_min: f64,
    /// `max / min` of `level_min` across levels.
    pub ratio: f64,
}

/// Options of [`stability_scan`].
#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub samples: usize,
    /// Elements whose gradient lies within this distance of a kink set of
    /// `H_p` receive sampled branch mixtures.
    pub kink_band: f64,
    pub seed: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            samples: 10,
            kink_band: 1e-2,
            seed: 42,
        }
    }
}

/// Per-element selections for sample `k`: the model's tie-break away from
/// kinks; at kink elements the inner branch (`k = 0`), the outer branch
/// (`k = 1`) or a uniformly random convex combination (`k ≥ 2`).
pub fn sampled_selection(problem: &MfgProblem, u: &[f64], k: usize, band: f64, rng: &mut ChaCha8Rng) -> Vec<Mat2> {
    let space = problem.space();
    let default = problem.hp_selection_field(u);
    (0..space.n_elements())
        .map(|t| {
            let x = space.element(t).centroid;
            match problem.model().hp_clarke_extremes(x, space.gradient(t, u), band) {
                None => default[t],
                Some((inner, outer)) => {
                    let s = match k {
                        0 => 0.0,
                        1 => 1.0,
                        _ => rng.gen_range(0.0..=1.0),
                    };
                    inner * (1.0 - s) + outer * s
                }
            }
        })
        .collect()
}

/// Smallest singular value of `L^{-1} J(ξ)` in the norm of
/// `G = blockdiag(K + M, M)`, where `L = blockdiag(K + λM, K + λM)` and
/// `J(ξ)` is the block Newton matrix; this is the discrete `I + T_h ∘ A_h`.
pub fn stability_constant(problem: &MfgProblem, state: &MfgState, xi: &[Mat2], seed: u64) -> Result<f64> {
    let space = problem.space();
    let n = space.n_free();
    let jac = problem.jacobian_with_selection(state, xi)?;
    let a = problem.linear_part();
    let k = assemble_stiffness(space);
    let h1 = k.linear_combination(1.0, problem.mass(), 1.0)?;
    let mut gb = TripletBuilder::new(2 * n, 2 * n);
    gb.push_block(0, 0, &h1, 1.0);
    gb.push_block(n, n, problem.mass(), 1.0);
    let gram = gb.build();
    let gram_lu = BandedLu::factor(&gram)?;
    let apply_l = |x: &[f64]| {
        let mut y = a.mul_vec(&x[..n]);
        y.extend(a.mul_vec(&x[n..]));
        y
    };
    // C = J^{-1} L, Cᵀ = L J^{-T}; the operator G^{-1} Cᵀ G C is
    // G-self-adjoint and its top eigenvalue is |C|_G^2 = smin^{-2}.
    let op = |x: &[f64]| {
        let c = jac.solve(&apply_l(x));
        let gc = gram.mul_vec(&c);
        let ct = apply_l(&jac.solve_transpose(&gc));
        gram_lu.solve(&ct)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let top = lanczos_largest(op, &gram, start, 200, 1e-12)?;
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::Eigen(format!("inverse norm estimate {top} is not positive")));
    }
    Ok(1.0 / top.sqrt())
}

/// Scans `(problem, converged state)` pairs, typically one per mesh level.
pub fn stability_scan(levels: &[(MfgProblem, MfgState)], options: &ScanOptions) -> Result<StabilityScanReport> {
    if levels.is_empty() || options.samples == 0 {
        return Err(Error::invalid("stability scan needs at least one level and one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut entries = Vec::new();
    let mut level_min = Vec::new();
    for (problem, state) in levels {
        let h = problem.space().mesh_size();
        let mut lo = f64::INFINITY;
        for k in 0..options.samples {
            let xi = sampled_selection(problem, &state.u, k, options.kink_band, &mut rng);
            let smin = stability_constant(problem, state, &xi, rng.gen())?;
            lo = lo.min(smin);
            entries.push(ScanEntry { h, sample: k, smin });
        }
        level_min.push(lo);
    }
    let overall_min = level_min.iter().copied().fold(f64::INFINITY, f64::min);
    let max = level_min.iter().copied().fold(0.0, f64::max);
    Ok(StabilityScanReport {
        entries,
        level_min,
        overall_min,
        ratio: max / overall_min,
    })
}

/// Least-squares line through `(log h, log err)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub r_squared: f64,
}

pub fn fit_rate(hs: &[f64], errs: &[f64]) -> Result<RateFit> {
    if hs.len() != errs.len() {
        return Err(Error::DimensionMismatch {
            expected: hs.len(),
            found: errs.len(),
        });
    }
    if hs.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 3 points, got {}",
            hs.len()
        )));
    }
    if let Some(v) = hs.iter().chain(errs).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("rate fit needs positive finite data, got {v}")));
    }
    let x = DVector::from_iterator(hs.len(), hs.iter().map(|v| v.ln()));
    let y = DVector::from_iterator(errs.len(), errs.iter().map(|v| v.ln()));
    let (xm, ym) = (x.mean(), y.mean());
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let syy: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs distinct mesh sizes"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { slope, r_squared })
}
