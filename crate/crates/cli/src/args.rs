use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "laminate-forge", version, about = "Staircase laminates, rank-one splits and their piecewise-affine realizations")]
pub struct Cli {
    /// JSON object supplying flag values; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output files. Nothing is written without it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (falls back to LAMINATE_FORGE_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Approx,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Staircase sequence nu_1..nu_k with optional exact bound checks.
    Staircase(StaircaseArgs),
    /// Constants of the target sets and the staircase.
    Constants(ConstantsArgs),
    /// Refinement split of a matrix near a staircase step set.
    Lamlem(LamlemArgs),
    /// Bridge split of a matrix in E_j.
    Bridge(BridgeArgs),
    /// Piecewise-affine realization of a two-atom split or a laminate.
    Realize(RealizeArgs),
    /// Truncated stage iteration on the unit square.
    Pipeline(PipelineArgs),
    /// Certificate check of a measure file and/or checks of a map file.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct StaircaseArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<u32>,
    /// Run the exact bound checks; failures give exit code 1.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub j: Option<u32>,
    /// Step level R as a rational, e.g. `2` or `5/2`.
    #[arg(long = "r", alias = "R")]
    pub r: Option<String>,
    #[arg(long)]
    pub a0: Option<usize>,
    /// Restrict the C(j,R,a0,a) table to one `a`.
    #[arg(long)]
    pub a: Option<usize>,
    /// Largest staircase level listed for C_k.
    #[arg(long)]
    pub kmax: Option<u32>,
    /// Search range for the seed index j1.
    #[arg(long)]
    pub j_max: Option<u32>,
}

#[derive(Args, Debug)]
pub struct MatrixInput {
    /// Matrix rows separated by `;`, entries by spaces or commas, e.g. `"2 0; 0 1/2"`.
    #[arg(long)]
    pub matrix: Option<String>,
    /// Diagonal entries, e.g. `"1/16,1"`.
    #[arg(long)]
    pub diag: Option<String>,
    /// File holding the matrix, as JSON rows or in `--matrix` syntax.
    #[arg(long = "a-file", alias = "A")]
    pub a_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LamlemArgs {
    #[command(flatten)]
    pub input: MatrixInput,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub j: Option<u32>,
    #[arg(long = "r", alias = "R")]
    pub r: Option<String>,
    /// Index of the step set the input is near; inferred when omitted.
    #[arg(long)]
    pub a0: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BridgeArgs {
    #[command(flatten)]
    pub input: MatrixInput,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub j: Option<u32>,
}

#[derive(Args, Debug)]
pub struct RealizeArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// First atom, same syntax as `--matrix`.
    #[arg(long)]
    pub b: Option<String>,
    /// Second atom.
    #[arg(long)]
    pub c: Option<String>,
    /// Certified laminate to realize instead of a single split.
    #[arg(long)]
    pub measure: Option<PathBuf>,
    /// Box `x0,y0,x1,y1`; defaults to the unit square.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub j1: Option<u32>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Maximum number of cells of the final map.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub band_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub measure: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
}
