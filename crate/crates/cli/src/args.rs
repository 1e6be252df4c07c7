//! Command-line grammar. Every argument struct is serializable so reports
//! can echo the resolved configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "nonsmooth-fem",
    version,
    about = "P1 finite element solvers for nonsmooth HJB and MFG systems"
)]
pub struct Cli {
    /// Seed of every randomized component.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print vertex and triangle counts and the mesh size.
    MeshInfo(MeshArgs),
    /// Solve one viscous Hamilton-Jacobi problem.
    SolveHj(SolveHjArgs),
    /// Solve one stationary mean field game system.
    SolveMfg(SolveMfgArgs),
    /// Error study of the manufactured HJB problem over mesh levels.
    ConvergenceHj(ConvergenceHjArgs),
    /// Error study of the manufactured MFG system over mesh levels.
    ConvergenceMfg(ConvergenceMfgArgs),
    /// Stability scan of the MFG Newton operator over mesh levels.
    DiagnoseStability(StabilityArgs),
    /// Run the built-in table of exact checks.
    Selftest,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MeshArgs {
    /// Subdivisions per side of the unit square.
    #[arg(long, default_value_t = 32)]
    pub n: usize,

    /// Plain-text mesh replacing the unit square.
    #[arg(long)]
    pub mesh_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Newton,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manufactured {
    /// `sin(πx) sin(πy)` for every unknown.
    Sinsin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialDensity {
    /// `16 x(1-x) y(1-y)`.
    Bump,
    /// Constant one.
    Uniform,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = SolverChoice::Newton)]
    pub solver: SolverChoice,

    /// Stopping tolerance on the dual norm of the residual.
    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,

    /// Relaxation of the Picard iteration.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolveHjArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,

    /// zero, eikonal, huber:<delta> or maxaffine:<file.csv>.
    #[arg(long, default_value = "eikonal")]
    pub hamiltonian: String,

    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    /// Manufactured exact solution; without it the source is `--source`.
    #[arg(long, value_enum)]
    pub manufactured: Option<Manufactured>,

    /// Constant right-hand side used when no manufactured solution is set.
    #[arg(long, default_value_t = 1.0)]
    pub source: f64,

    #[command(flatten)]
    pub solver: SolverArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Directory receiving the Newton matrix, load and solution.
    #[arg(long)]
    pub dump_system: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolveMfgArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,

    #[arg(long, default_value = "huber:1.0")]
    pub hamiltonian: String,

    /// zero, local:linear[:c], local:arctan, nonlocal:linear[:c] or
    /// nonlocal:arctan.
    #[arg(long, default_value = "local:linear")]
    pub coupling: String,

    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    #[arg(long, value_enum, default_value_t = InitialDensity::Bump)]
    pub m0: InitialDensity,

    /// Manufactured pair with compensating sources; replaces `--m0`.
    #[arg(long, value_enum)]
    pub manufactured: Option<Manufactured>,

    /// Exponent of the W^{1,r} x L^r errors of manufactured runs.
    #[arg(long, default_value_t = 4.0)]
    pub r: f64,

    #[command(flatten)]
    pub solver: SolverArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Directory receiving the Newton matrix and solution.
    #[arg(long)]
    pub dump_system: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConvergenceHjArgs {
    /// Strictly increasing subdivision counts.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub levels: Vec<usize>,

    #[arg(long, default_value = "eikonal")]
    pub hamiltonian: String,

    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    #[arg(long, value_enum, default_value_t = Manufactured::Sinsin)]
    pub manufactured: Manufactured,

    #[command(flatten)]
    pub solver: SolverArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Table of per-level errors.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConvergenceMfgArgs {
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub levels: Vec<usize>,

    #[arg(long, default_value = "huber:1.0")]
    pub hamiltonian: String,

    /// Local couplings only.
    #[arg(long, default_value = "local:linear")]
    pub coupling: String,

    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    #[arg(long, value_enum, default_value_t = Manufactured::Sinsin)]
    pub manufactured: Manufactured,

    #[arg(long, default_value_t = 4.0)]
    pub r: f64,

    #[command(flatten)]
    pub solver: SolverArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StabilityArgs {
    /// Report written by `solve-mfg`; its configuration defines the problem.
    #[arg(long)]
    pub from: PathBuf,

    /// Unit square levels; the mesh of the saved run is not reused.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub levels: Vec<usize>,

    /// Selections sampled per level.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,

    /// Gradient distance to a kink below which branch mixtures are sampled.
    #[arg(long, default_value_t = 1e-2)]
    pub kink_band: f64,

    /// CSV with columns h, sample, smin; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
