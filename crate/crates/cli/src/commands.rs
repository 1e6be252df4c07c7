//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nonsmooth_fem::diagnostics::{stability_scan, RateFit, ScanOptions};
use nonsmooth_fem::fem::{error_vs_exact, interpolate_nodal, FeSpace, NormKind};
use nonsmooth_fem::hamiltonian::HamiltonianModel;
use nonsmooth_fem::hj::HjProblem;
use nonsmooth_fem::mesh::{Point, TriMesh};
use nonsmooth_fem::mfg::{CouplingModel, MfgProblem, MfgState};
use nonsmooth_fem::study::{
    self, convergence_row_hj, convergence_row_mfg, manufactured_hj, manufactured_mfg, mfg_errors, unit_square_family,
    ConvergenceReport, ConvergenceRow, SinSin, SolverKind, StudyOptions,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{
    ConvergenceHjArgs, ConvergenceMfgArgs, InitialDensity, Manufactured, MeshArgs, SolveHjArgs, SolveMfgArgs,
    SolverArgs, SolverChoice, StabilityArgs,
};
use crate::{CliError, CliResult};

const HJ_TOL: f64 = 1e-10;
const MFG_TOL: f64 = 1e-9;

fn usage(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{key}: {msg}"))
}

fn check_finite(key: &str, v: f64) -> CliResult<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(usage(key, format!("expected a finite number, got {v}")))
    }
}

fn check_positive(key: &str, v: f64) -> CliResult<()> {
    check_finite(key, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(usage(key, format!("must be positive, got {v}")))
    }
}

fn check_levels(key: &str, levels: &[usize]) -> CliResult<()> {
    if levels.is_empty() || levels.contains(&0) {
        return Err(usage(key, "needs at least one positive level"));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage(
            key,
            format!("levels must be strictly increasing, got {levels:?}"),
        ));
    }
    Ok(())
}

fn parse_hamiltonian(spec: &str) -> CliResult<HamiltonianModel> {
    HamiltonianModel::parse(spec).map_err(|e| usage("--hamiltonian", e))
}

fn parse_coupling(spec: &str) -> CliResult<CouplingModel> {
    CouplingModel::parse(spec).map_err(|e| usage("--coupling", e))
}

/// Validates the solver flags and stores the resolved tolerance, so the
/// echoed configuration is complete.
fn resolve_solver(solver: &mut SolverArgs, default_tol: f64) -> CliResult<StudyOptions> {
    let tol = *solver.tol.get_or_insert(default_tol);
    check_positive("--tol", tol)?;
    if solver.max_iter == 0 {
        return Err(usage("--max-iter", "must be at least 1"));
    }
    if !(solver.theta > 0.0 && solver.theta <= 1.0) {
        return Err(usage("--theta", format!("must lie in (0, 1], got {}", solver.theta)));
    }
    Ok(StudyOptions {
        tol,
        max_iter: solver.max_iter,
        solver: match solver.solver {
            SolverChoice::Newton => SolverKind::Newton,
            SolverChoice::Picard => SolverKind::Picard(solver.theta),
        },
    })
}

fn load_mesh(args: &MeshArgs) -> CliResult<Arc<TriMesh>> {
    match &args.mesh_file {
        Some(path) => TriMesh::load(path)
            .map(Arc::new)
            .map_err(|e| usage("--mesh-file", format!("{}: {e}", path.display()))),
        None => {
            if args.n == 0 {
                return Err(usage("--n", "must be at least 1"));
            }
            Ok(Arc::new(TriMesh::unit_square(args.n)?))
        }
    }
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, B: Serialize> {
    command: &'a str,
    seed: u64,
    config: &'a C,
    #[serde(flatten)]
    body: B,
    /// Seconds; the only field that varies between identical runs.
    wall_time: f64,
}

fn write_text(key: &str, path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| usage(key, format!("{}: {e}", path.display())))
}

fn write_report<C: Serialize, B: Serialize>(
    path: Option<&Path>,
    command: &str,
    seed: u64,
    config: &C,
    body: B,
    start: Instant,
) -> CliResult<()> {
    let Some(path) = path else {
        return Ok(());
    };
    let report = Report {
        command,
        seed,
        config,
        body,
        wall_time: start.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failure(e.to_string()))?;
    text.push('\n');
    write_text("--out", path, &text)
}

pub fn mesh_info(args: &MeshArgs) -> CliResult<()> {
    let mesh = load_mesh(args)?;
    println!(
        "vertices={} triangles={} h={} min_angle={}",
        mesh.n_vertices(),
        mesh.n_triangles(),
        mesh.mesh_size(),
        mesh.min_angle()
    );
    Ok(())
}

#[derive(Serialize)]
struct HjBody {
    h: f64,
    dofs: usize,
    iterations: usize,
    converged: bool,
    residuals: Vec<f64>,
    err_h1: Option<f64>,
    err_l2: Option<f64>,
}

fn vertex_table(space: &FeSpace, columns: &[(&str, &[f64])]) -> String {
    let verts = space.mesh().vertices();
    let mut s = String::from("dof,x,y");
    for (name, _) in columns {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for dof in 0..space.n_free() {
        let p = verts[space.vertex_of_dof(dof)];
        let _ = write!(s, "{dof},{},{}", p.x, p.y);
        for (_, values) in columns {
            let _ = write!(s, ",{}", values[dof]);
        }
        s.push('\n');
    }
    s
}

fn dump_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage("--dump-system", format!("{}: {e}", dir.display())))
}

pub fn solve_hj(mut args: SolveHjArgs, seed: u64) -> CliResult<()> {
    let start = Instant::now();
    let options = resolve_solver(&mut args.solver, HJ_TOL)?;
    check_finite("--lambda", args.lambda)?;
    check_finite("--source", args.source)?;
    let model = parse_hamiltonian(&args.hamiltonian)?;
    let space = Arc::new(FeSpace::new(load_mesh(&args.mesh)?)?);
    let problem = match args.manufactured {
        Some(Manufactured::Sinsin) => manufactured_hj(Arc::clone(&space), model, args.lambda)?,
        None => {
            let f = args.source;
            HjProblem::new(Arc::clone(&space), model, args.lambda, move |_| f)?
        }
    };
    let rep = study::solve_hj(&problem, &options)?;
    let (err_h1, err_l2) = match args.manufactured {
        Some(Manufactured::Sinsin) => {
            let s = SinSin;
            let value = |p| s.value(p);
            let grad = |p| s.gradient(p);
            (
                Some(error_vs_exact(&space, &rep.solution, value, grad, NormKind::H1)?),
                Some(error_vs_exact(&space, &rep.solution, value, grad, NormKind::L2)?),
            )
        }
        None => (None, None),
    };
    if let Some(dir) = &args.dump_system {
        dump_dir(dir)?;
        write_text(
            "--dump-system",
            &dir.join("system.mtx"),
            &problem.linear_part().to_matrix_market(),
        )?;
        let jac = problem.jacobian(&rep.solution)?;
        write_text("--dump-system", &dir.join("jacobian.mtx"), &jac.to_matrix_market())?;
        let table = vertex_table(&space, &[("load", problem.load()), ("u", &rep.solution)]);
        write_text("--dump-system", &dir.join("solution.csv"), &table)?;
    }
    println!(
        "h={} dofs={} iterations={} residual={:e} converged={}",
        space.mesh_size(),
        space.n_free(),
        rep.iterations,
        rep.final_residual(),
        rep.converged
    );
    if let (Some(h1), Some(l2)) = (err_h1, err_l2) {
        println!("err_h1={h1:e} err_l2={l2:e}");
    }
    let converged = rep.converged;
    let (iterations, residual) = (rep.iterations, rep.final_residual());
    let body = HjBody {
        h: space.mesh_size(),
        dofs: space.n_free(),
        iterations: rep.iterations,
        converged: rep.converged,
        residuals: rep.residual_history,
        err_h1,
        err_l2,
    };
    write_report(args.out.as_deref(), "solve-hj", seed, &args, body, start)?;
    if !converged {
        return Err(CliError::NonConvergence(format!(
            "HJB solver stopped after {iterations} iterations at residual {residual:e}"
        )));
    }
    Ok(())
}

fn bump(p: Point) -> f64 {
    16.0 * p.x * (1.0 - p.x) * p.y * (1.0 - p.y)
}

fn build_mfg(args: &SolveMfgArgs, mesh: Arc<TriMesh>) -> CliResult<MfgProblem> {
    check_positive("--lambda", args.lambda)?;
    let model = parse_hamiltonian(&args.hamiltonian)?;
    let coupling = parse_coupling(&args.coupling)?;
    let space = Arc::new(FeSpace::new(mesh)?);
    Ok(match args.manufactured {
        Some(Manufactured::Sinsin) => manufactured_mfg(space, model, coupling, args.lambda)?,
        None => {
            let m0 = match args.m0 {
                InitialDensity::Bump => interpolate_nodal(&space, bump)?,
                InitialDensity::Uniform => interpolate_nodal(&space, |_| 1.0)?,
            };
            MfgProblem::new(space, model, coupling, args.lambda, m0)?
        }
    })
}

#[derive(Serialize)]
struct MfgBody {
    h: f64,
    dofs: usize,
    iterations: usize,
    converged: bool,
    residuals: Vec<f64>,
    errors: Option<BTreeMap<String, f64>>,
}

pub fn solve_mfg(mut args: SolveMfgArgs, seed: u64) -> CliResult<()> {
    let start = Instant::now();
    let options = resolve_solver(&mut args.solver, MFG_TOL)?;
    if !(2.0..=6.0).contains(&args.r) {
        return Err(usage("--r", format!("must lie in [2, 6], got {}", args.r)));
    }
    let problem = build_mfg(&args, load_mesh(&args.mesh)?)?;
    let space = problem.space_arc();
    let rep = study::solve_mfg(&problem, &options)?;
    let errors = match args.manufactured {
        Some(Manufactured::Sinsin) => Some(mfg_errors(&space, &rep.solution, args.r)?),
        None => None,
    };
    if let Some(dir) = &args.dump_system {
        dump_dir(dir)?;
        let jac = problem.jacobian(&rep.solution)?;
        write_text(
            "--dump-system",
            &dir.join("jacobian.mtx"),
            &jac.matrix().to_matrix_market(),
        )?;
        let MfgState { u, m } = &rep.solution;
        write_text(
            "--dump-system",
            &dir.join("solution.csv"),
            &vertex_table(&space, &[("u", u), ("m", m)]),
        )?;
    }
    println!(
        "h={} dofs={} iterations={} residual={:e} converged={}",
        space.mesh_size(),
        2 * space.n_free(),
        rep.iterations,
        rep.final_residual(),
        rep.converged
    );
    if let Some(errs) = &errors {
        let line: Vec<String> = errs.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        println!("{}", line.join(" "));
    }
    let converged = rep.converged;
    let (iterations, residual) = (rep.iterations, rep.final_residual());
    let body = MfgBody {
        h: space.mesh_size(),
        dofs: 2 * space.n_free(),
        iterations: rep.iterations,
        converged: rep.converged,
        residuals: rep.residual_history,
        errors,
    };
    write_report(args.out.as_deref(), "solve-mfg", seed, &args, body, start)?;
    if !converged {
        return Err(CliError::NonConvergence(format!(
            "MFG solver stopped after {iterations} iterations at residual {residual:e}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct StudyBody<'a> {
    rows: &'a [ConvergenceRow],
    rates: &'a BTreeMap<String, RateFit>,
}

fn print_study(report: &ConvergenceReport) {
    for row in &report.rows {
        let errs: Vec<String> = row.errors.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        println!(
            "h={} dofs={} iterations={} {}",
            row.h,
            row.dofs,
            row.iterations,
            errs.join(" ")
        );
    }
    for (key, fit) in &report.rates {
        println!("rate {key}={:.4} r2={:.6}", fit.slope, fit.r_squared);
    }
}

fn study_csv(report: &ConvergenceReport) -> String {
    let keys: Vec<&String> = report
        .rows
        .first()
        .map(|r| r.errors.keys().collect())
        .unwrap_or_default();
    let mut s = String::from("h,dofs,iterations,final_residual");
    for k in &keys {
        let _ = write!(s, ",{k}");
    }
    s.push('\n');
    for row in &report.rows {
        let _ = write!(s, "{},{},{},{:e}", row.h, row.dofs, row.iterations, row.final_residual);
        for k in &keys {
            let _ = write!(s, ",{:e}", row.errors[*k]);
        }
        s.push('\n');
    }
    s
}

fn finish_study<C: Serialize>(
    report: &ConvergenceReport,
    command: &str,
    seed: u64,
    config: &C,
    out: Option<&Path>,
    csv: Option<&Path>,
    start: Instant,
) -> CliResult<()> {
    print_study(report);
    if let Some(path) = csv {
        write_text("--csv", path, &study_csv(report))?;
    }
    let body = StudyBody {
        rows: &report.rows,
        rates: &report.rates,
    };
    write_report(out, command, seed, config, body, start)
}

pub fn convergence_hj(mut args: ConvergenceHjArgs, seed: u64) -> CliResult<()> {
    let start = Instant::now();
    let options = resolve_solver(&mut args.solver, HJ_TOL)?;
    check_finite("--lambda", args.lambda)?;
    let model = parse_hamiltonian(&args.hamiltonian)?;
    check_levels("--levels", &args.levels)?;
    let meshes = unit_square_family(&args.levels)?;
    let rows = meshes
        .par_iter()
        .map(|mesh| convergence_row_hj(mesh, &model, args.lambda, &options).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    let report = ConvergenceReport::from_rows(rows)?;
    finish_study(
        &report,
        "convergence-hj",
        seed,
        &args,
        args.out.as_deref(),
        args.csv.as_deref(),
        start,
    )
}

pub fn convergence_mfg(mut args: ConvergenceMfgArgs, seed: u64) -> CliResult<()> {
    let start = Instant::now();
    let options = resolve_solver(&mut args.solver, MFG_TOL)?;
    check_positive("--lambda", args.lambda)?;
    if !(2.0..=6.0).contains(&args.r) {
        return Err(usage("--r", format!("must lie in [2, 6], got {}", args.r)));
    }
    let model = parse_hamiltonian(&args.hamiltonian)?;
    let coupling = parse_coupling(&args.coupling)?;
    check_levels("--levels", &args.levels)?;
    let meshes = unit_square_family(&args.levels)?;
    let rows = meshes
        .par_iter()
        .map(|mesh| convergence_row_mfg(mesh, &model, &coupling, args.lambda, args.r, &options).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    let report = ConvergenceReport::from_rows(rows)?;
    finish_study(
        &report,
        "convergence-mfg",
        seed,
        &args,
        args.out.as_deref(),
        args.csv.as_deref(),
        start,
    )
}

#[derive(Deserialize)]
struct SavedMfg {
    config: SolveMfgArgs,
}

pub fn diagnose_stability(args: StabilityArgs, seed: u64) -> CliResult<()> {
    check_levels("--levels", &args.levels)?;
    if args.samples == 0 {
        return Err(usage("--samples", "must be at least 1"));
    }
    check_positive("--kink-band", args.kink_band)?;
    let text =
        std::fs::read_to_string(&args.from).map_err(|e| usage("--from", format!("{}: {e}", args.from.display())))?;
    let saved: SavedMfg = serde_json::from_str(&text).map_err(|e| {
        usage(
            "--from",
            format!("{} is not a solve-mfg report: {e}", args.from.display()),
        )
    })?;
    let mut config = saved.config;
    let options = resolve_solver(&mut config.solver, MFG_TOL)?;
    let levels = args
        .levels
        .par_iter()
        .map(|&n| {
            let problem = build_mfg(&config, Arc::new(TriMesh::unit_square(n)?))?;
            let rep = study::solve_mfg(&problem, &options)?;
            if !rep.converged {
                return Err(CliError::NonConvergence(format!(
                    "MFG solver on level {n} stopped at residual {:e}",
                    rep.final_residual()
                )));
            }
            Ok((problem, rep.solution))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let scan = stability_scan(
        &levels,
        &ScanOptions {
            samples: args.samples,
            kink_band: args.kink_band,
            seed,
        },
    )?;
    let mut csv = String::from("h,sample,smin\n");
    for e in &scan.entries {
        let _ = writeln!(csv, "{},{},{}", e.h, e.sample, e.smin);
    }
    match &args.out {
        Some(path) => write_text("--out", path, &csv)?,
        None => print!("{csv}"),
    }
    let minima: Vec<String> = scan.level_min.iter().map(|v| format!("{v:.6}")).collect();
    eprintln!(
        "level minima [{}] min={:.6} ratio={:.6}",
        minima.join(", "),
        scan.overall_min,
        scan.ratio
    );
    Ok(())
}
