use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "krsketch", version, about = "Sketched Khatri-Rao least squares: sweeps, EIT and embedding diagnostics")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relative error against the number of sketch rows r.
    SweepR(SweepArgs),
    /// Relative error against the ambient size n1 = n2 = n.
    SweepN(SweepArgs),
    /// Relative error against the number of unknowns p.
    SweepP(SweepArgs),
    /// Linearized EIT reconstruction over an r grid.
    Eit(EitArgs),
    /// Monte Carlo check of the subspace embedding property.
    EmbedTest(EmbedArgs),
    /// Monte Carlo check of the moments and tails of zeta = xi' Sigma eta.
    ZetaTest(ZetaArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file with `key = value` lines or a JSON object; keys are flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; trial t uses seed + t.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trials per grid point.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Output path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Optional JSON summary with medians (sweeps and eit).
    #[arg(long, global = true)]
    pub summary: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Relative singular value cutoff of the least-squares solver.
    #[arg(long, global = true)]
    pub rcond: Option<f64>,
    /// Record wall-clock time per trial; outputs are then no longer reproducible.
    #[arg(long, global = true)]
    pub timing: bool,
    /// Log one line per grid point.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated strategies (case1, case2, dense-gaussian) or `all`.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Grid of the swept variable (same as --r-grid, --n-grid or --p-grid).
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated r values (sweep-r).
    #[arg(long)]
    pub r_grid: Option<String>,
    /// Comma-separated n values (sweep-n).
    #[arg(long)]
    pub n_grid: Option<String>,
    /// Comma-separated p values (sweep-p).
    #[arg(long)]
    pub p_grid: Option<String>,
    /// Sketch rows for sweep-n and sweep-p.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Standard deviation of the noise added to b.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EitArgs {
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub r_grid: Option<String>,
    /// Cells per side of the mesh.
    #[arg(long)]
    pub nx: Option<usize>,
    /// Background conductivity.
    #[arg(long)]
    pub sigma_star: Option<f64>,
    /// Standard deviation of the data noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// `one-point` or `four-point`.
    #[arg(long)]
    pub quadrature: Option<String>,
    /// Squares `x0:y0:side:amplitude`, separated by `;`.
    #[arg(long)]
    pub inclusions: Option<String>,
    /// Leave the four corner nodes out of the source set.
    #[arg(long)]
    pub exclude_corners: bool,
    /// Value of each discrete boundary delta.
    #[arg(long)]
    pub source_scale: Option<f64>,
    /// Directory of the reconstruction grid files (default: next to --out).
    #[arg(long)]
    pub grid_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Rank of each factor; the tested subspace has dimension p².
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    /// Sketch rows for every strategy; by default each strategy uses its own row formula.
    #[arg(long)]
    pub r: Option<usize>,
    /// Constant in the row formulas (default 16).
    #[arg(long)]
    pub c: Option<f64>,
    /// Random directions per trial for the sampled distortion.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ZetaArgs {
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    /// `uniform`, `single` or `random`.
    #[arg(long)]
    pub spectrum: Option<String>,
}
