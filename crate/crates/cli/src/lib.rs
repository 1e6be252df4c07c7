//! Batch front end of `nonsmooth-fem`: solves, error studies, stability
//! scans and a self-test, with JSON and CSV reports.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 nonconvergence,
//! 3 any other failure (including a failing self-test).

mod args;
mod commands;
mod selftest;

use std::ffi::OsString;
use std::fmt;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::Cli;
use args::Command;

/// Caps the worker threads of level fan-out.
pub const THREADS_VAR: &str = "NONSMOOTH_FEM_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    NonConvergence(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Failure(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::NonConvergence(m) => write!(f, "not converged: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<nonsmooth_fem::Error> for CliError {
    fn from(e: nonsmooth_fem::Error) -> Self {
        use nonsmooth_fem::Error as E;
        match e {
            E::InvalidArgument(_) | E::InvalidMesh(_) | E::DegenerateElement { .. } | E::Parse { .. } | E::Io(_) => {
                CliError::Usage(e.to_string())
            }
            E::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (program name first), executes the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let pool = thread_pool()?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::MeshInfo(a) => commands::mesh_info(&a),
        Command::SolveHj(a) => commands::solve_hj(a, seed),
        Command::SolveMfg(a) => commands::solve_mfg(a, seed),
        Command::ConvergenceHj(a) => commands::convergence_hj(a, seed),
        Command::ConvergenceMfg(a) => commands::convergence_mfg(a, seed),
        Command::DiagnoseStability(a) => commands::diagnose_stability(a, seed),
        Command::Selftest => selftest::run(seed),
    })
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Failure(e.to_string()))
}
