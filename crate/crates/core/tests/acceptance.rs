//! Acceptance suite: each criterion prints one PASS/FAIL line; the process
//! exits with a failure status if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use nonsmooth_fem::diagnostics::{banach_constant, perturbation_check, stability_scan, GramPair, ScanOptions};
use nonsmooth_fem::fem::{interpolate_nodal, norm, FeSpace, NormKind};
use nonsmooth_fem::hamiltonian::{mean_value_matrix, AffinePiece, HamiltonianModel, Vec2};
use nonsmooth_fem::hj::{solve_newton, solve_picard};
use nonsmooth_fem::mesh::{Point, TriMesh};
use nonsmooth_fem::mfg::{check_monotonicity, mfg_newton, mfg_picard, CouplingLaw, CouplingModel, MfgProblem};
use nonsmooth_fem::study::{
    convergence_study_hj, convergence_study_mfg, manufactured_hj, manufactured_mfg, unit_square_family, StudyOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const LEVELS: [usize; 4] = [8, 16, 32, 64];

fn space(n: usize) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(Arc::new(TriMesh::unit_square(n).unwrap())).unwrap())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hj_rate() -> Outcome {
    let start = Instant::now();
    let meshes = unit_square_family(&LEVELS).map_err(|e| e.to_string())?;
    let rep = convergence_study_hj(&meshes, &HamiltonianModel::Eikonal, 1.0, &StudyOptions::default())
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let fit = rep.rate("h1").unwrap();
    check(
        fit.slope >= 0.9 && fit.r_squared >= 0.99 && secs < 60.0,
        format!("H1 rate {:.4}, r² {:.6}, {:.2} s", fit.slope, fit.r_squared, secs),
    )
}

fn poisson_rates() -> Outcome {
    let meshes = unit_square_family(&LEVELS).map_err(|e| e.to_string())?;
    let rep = convergence_study_hj(&meshes, &HamiltonianModel::Zero, 0.0, &StudyOptions::default())
        .map_err(|e| e.to_string())?;
    let h1 = rep.rate("h1").unwrap().slope;
    let l2 = rep.rate("l2").unwrap().slope;
    check(
        (1.8..=2.2).contains(&l2) && (0.9..=1.1).contains(&h1),
        format!("L2 rate {l2:.4}, H1 rate {h1:.4}"),
    )
}

struct MfgStudy {
    h1_l2: f64,
    w1r_lr: f64,
    margin: f64,
    secs: f64,
}

fn mfg_study() -> Result<MfgStudy, String> {
    let start = Instant::now();
    let model = HamiltonianModel::huber(1.0).unwrap();
    let coupling = CouplingModel::local(CouplingLaw::Linear(1.0));
    let meshes = unit_square_family(&LEVELS).map_err(|e| e.to_string())?;
    let options = StudyOptions {
        tol: 1e-9,
        ..StudyOptions::default()
    };
    let rep = convergence_study_mfg(&meshes, &model, &coupling, 1.0, 4.0, &options).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    // monotonicity of the coupling on the coarse-level exact density and a
    // few shifted copies
    let s = space(8);
    let base = interpolate_nodal(&s, |p| {
        (std::f64::consts::PI * p.x).sin() * (std::f64::consts::PI * p.y).sin()
    })
    .map_err(|e| e.to_string())?;
    let samples: Vec<Vec<f64>> = [0.0, -2.0, 3.0]
        .iter()
        .map(|c| base.iter().map(|v| v + c).collect())
        .collect();
    let mono = check_monotonicity(&coupling, &s, &samples, 42).map_err(|e| e.to_string())?;
    Ok(MfgStudy {
        h1_l2: rep.rate("h1_l2").unwrap().slope,
        w1r_lr: rep.rate("w1r_lr").unwrap().slope,
        margin: mono.margin,
        secs,
    })
}

fn mean_value_oracle() -> Outcome {
    let start = Instant::now();
    let models = vec![
        HamiltonianModel::Zero,
        HamiltonianModel::Eikonal,
        HamiltonianModel::max_affine(vec![
            AffinePiece::new(1.0, 0.0, 0.0),
            AffinePiece::new(-1.0, 0.5, 0.2),
            AffinePiece::new(0.3, -2.0, -0.1),
            AffinePiece::new(0.0, 1.5, 0.4),
        ])
        .unwrap(),
        HamiltonianModel::huber(1.0).unwrap(),
        HamiltonianModel::huber(0.2).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_secant = 0.0f64;
    let mut worst_bound = f64::NEG_INFINITY;
    for model in &models {
        let ch = model.lipschitz_constant();
        for k in 0..10_000 {
            let x = Point::new(rng.gen(), rng.gen());
            let z1 = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            // every fourth pair is reflected through the origin so the
            // segment crosses the kink sets
            let z2 = if k % 4 == 0 {
                -z1 * rng.gen_range(0.1..2.0)
            } else {
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))
            };
            let a = mean_value_matrix(model, x, z1, z2).map_err(|e| e.to_string())?;
            let (h1, h2) = (model.value(x, z1), model.value(x, z2));
            let secant = (a.dot(&(z1 - z2)) - (h1 - h2)).abs() / (1.0 + h1.abs() + h2.abs());
            worst_secant = worst_secant.max(secant);
            worst_bound = worst_bound.max(a.norm() - ch);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_secant <= 1e-10 && worst_bound <= 1e-12 && secs < 5.0,
        format!("max relative secant defect {worst_secant:.2e}, max |A| - C_H {worst_bound:.2e}, {secs:.2} s"),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

fn perturbation_inequality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for k in 0..1000 {
        let grams = if k % 2 == 0 {
            GramPair::identity(8, 8)
        } else {
            GramPair::new(random_spd(&mut rng, 8), random_spd(&mut rng, 8)).unwrap()
        };
        let t = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let scale = rng.gen_range(0.01..1.0);
        let s = DMatrix::from_fn(8, 8, |_, _| scale * rng.gen_range(-1.0..1.0));
        let rep = perturbation_check(&t, &s, &grams).map_err(|e| e.to_string())?;
        min_slack = min_slack.min(rep.slack);
        if !rep.holds {
            violations += 1;
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows = rng.gen_range(2..=10);
        let cols = rng.gen_range(1..=rows);
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let got = banach_constant(&a, &GramPair::identity(cols, rows)).map_err(|e| e.to_string())?;
        let oracle = a.svd(false, false).singular_values.min();
        worst = worst.max((got - oracle).abs());
    }
    check(
        violations == 0 && worst <= 1e-12,
        format!("{violations} violations (min slack {min_slack:.3e}), max deviation from SVD {worst:.2e}"),
    )
}

fn monotone_problem(n: usize) -> MfgProblem {
    let s = space(n);
    let m0 = interpolate_nodal(&s, |p| 16.0 * p.x * (1.0 - p.x) * p.y * (1.0 - p.y)).unwrap();
    MfgProblem::new(
        s,
        HamiltonianModel::huber(1.0).unwrap(),
        CouplingModel::local(CouplingLaw::Linear(1.0)),
        1.0,
        m0,
    )
    .unwrap()
}

fn uniform_stability() -> Outcome {
    let mut levels = Vec::new();
    for n in [8, 16, 32] {
        let p = monotone_problem(n);
        let rep = mfg_newton(&p, &p.initial_state(), 1e-10, 50).map_err(|e| e.to_string())?;
        if !rep.converged {
            return Err(format!("monotone MFG did not converge on n = {n}"));
        }
        levels.push((p, rep.solution));
    }
    let scan = stability_scan(&levels, &ScanOptions::default()).map_err(|e| e.to_string())?;
    check(
        scan.overall_min > 0.0 && scan.ratio <= 10.0,
        format!(
            "level minima {:?}, min {:.4}, ratio {:.4}",
            scan.level_min.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            scan.overall_min,
            scan.ratio
        ),
    )
}

fn cross_solver() -> Outcome {
    let mut worst_ratio = 0.0f64;
    let mut details = Vec::new();
    for n in [8, 16, 32] {
        let s = space(n);
        for (model, lambda) in [
            (HamiltonianModel::Eikonal, 1.0),
            (HamiltonianModel::Zero, 0.0),
            (HamiltonianModel::huber(1.0).unwrap(), 1.0),
        ] {
            let tol = 1e-10;
            let p = manufactured_hj(s.clone(), model.clone(), lambda).map_err(|e| e.to_string())?;
            let u0 = vec![0.0; s.n_free()];
            let a = solve_newton(&p, &u0, tol, 100).map_err(|e| e.to_string())?;
            let b = solve_picard(&p, &u0, tol, 1000, 0.5).map_err(|e| e.to_string())?;
            if !a.converged || !b.converged {
                return Err(format!("HJ {model} on n = {n} did not converge"));
            }
            let d: Vec<f64> = a.solution.iter().zip(&b.solution).map(|(x, y)| x - y).collect();
            let e = norm(&s, &d, NormKind::H1).unwrap();
            worst_ratio = worst_ratio.max(e / tol);
        }
        let tol = 1e-9;
        let p = manufactured_mfg(
            s.clone(),
            HamiltonianModel::huber(1.0).unwrap(),
            CouplingModel::local(CouplingLaw::Linear(1.0)),
            1.0,
        )
        .map_err(|e| e.to_string())?;
        let a = mfg_newton(&p, &p.initial_state(), tol, 100).map_err(|e| e.to_string())?;
        let b = mfg_picard(&p, &p.initial_state(), tol, 1000, 0.5).map_err(|e| e.to_string())?;
        if !a.converged || !b.converged {
            return Err(format!("manufactured MFG on n = {n} did not converge"));
        }
        let du: Vec<f64> = a.solution.u.iter().zip(&b.solution.u).map(|(x, y)| x - y).collect();
        let dm: Vec<f64> = a.solution.m.iter().zip(&b.solution.m).map(|(x, y)| x - y).collect();
        let e = norm(&s, &du, NormKind::H1)
            .unwrap()
            .hypot(norm(&s, &dm, NormKind::L2).unwrap());
        worst_ratio = worst_ratio.max(e / tol);
        details.push(format!("n={n}: mfg diff {e:.2e}"));
    }
    check(
        worst_ratio <= 10.0,
        format!("max difference / tol = {worst_ratio:.3} ({})", details.join(", ")),
    )
}

fn localization() -> Outcome {
    let s = space(16);
    let p = manufactured_hj(s.clone(), HamiltonianModel::Eikonal, 1.0).map_err(|e| e.to_string())?;
    let tol = 1e-12;
    let base = solve_newton(&p, &vec![0.0; s.n_free()], tol, 100).map_err(|e| e.to_string())?;
    if !base.converged {
        return Err("reference solve did not converge".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let delta: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let radius = 0.1 * rng.gen_range(0.1..=1.0) / norm(&s, &delta, NormKind::H1).unwrap();
        let u0: Vec<f64> = base.solution.iter().zip(&delta).map(|(u, d)| u + radius * d).collect();
        let rep = solve_newton(&p, &u0, tol, 100).map_err(|e| e.to_string())?;
        if !rep.converged {
            return Err("a perturbed restart did not converge".into());
        }
        let d: Vec<f64> = rep.solution.iter().zip(&base.solution).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&s, &d, NormKind::H1).unwrap());
    }
    check(worst <= 1e-8, format!("max H1 distance between restarts {worst:.2e}"))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(d) => println!("PASS  {name}: {d}"),
        Err(d) => {
            failures += 1;
            println!("FAIL  {name}: {d}");
        }
    };
    report("1 HJ eikonal H1 rate", hj_rate());
    report("2 Poisson L2/H1 rates", poisson_rates());
    match mfg_study() {
        Ok(st) => {
            report(
                "3 MFG H1xL2 rate",
                check(
                    st.h1_l2 >= 0.9 && st.margin > 0.0 && st.secs < 180.0,
                    format!(
                        "rate {:.4}, monotonicity margin {:.3e}, {:.2} s",
                        st.h1_l2, st.margin, st.secs
                    ),
                ),
            );
            report(
                "4 MFG W1,4xL4 rate",
                check(st.w1r_lr >= 0.25, format!("rate {:.4}", st.w1r_lr)),
            );
        }
        Err(e) => {
            report("3 MFG H1xL2 rate", Err(e.clone()));
            report("4 MFG W1,4xL4 rate", Err(e));
        }
    }
    report("5 mean value oracle", mean_value_oracle());
    report("6 perturbation inequality and SVD oracle", perturbation_inequality());
    report("7 uniform stability surrogate", uniform_stability());
    report("8 Newton/Picard agreement", cross_solver());
    report("9 localization probe", localization());
    if failures == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
