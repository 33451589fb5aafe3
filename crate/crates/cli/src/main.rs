mod commands;
mod compare;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nib_core::percolation::{MessageInit, Mode, RegionRule};
use nib_core::NodeFactor;

/// Neighborhood-intersection message passing for bond percolation and
/// spectral densities.
#[derive(Debug, Parser)]
#[command(name = "nib", version)]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output file; the run manifest goes to `<out>.manifest.json`.
    /// Without it, output goes to stdout and the manifest to stderr.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Neighborhood classing, pivots, loop-bound verdict and size report.
    Neigh(NeighArgs),
    /// Cluster-size statistics from message passing.
    Percolation(PercolationArgs),
    /// Spectral density on an x grid from message passing.
    Spectrum(SpectrumArgs),
    /// Brute-force reference results.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Diff a method output against an oracle output for the same input.
    #[command(subcommand)]
    Compare(CompareCommand),
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Exhaustive enumeration or Monte Carlo sampling.
    Percolation(OraclePercolationArgs),
    /// Dense eigendecomposition.
    Spectrum(OracleSpectrumArgs),
}

#[derive(Debug, Subcommand)]
pub enum CompareCommand {
    Percolation(ComparePercolationArgs),
    Spectrum(CompareSpectrumArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Edge list: "u v [weight]" per line, `#` comments.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Symmetric coordinate matrix: "n nnz" header, then "i j value".
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NeighArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub r: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Auto,
    Bounded,
    Unbounded,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => Mode::Auto,
            ModeArg::Bounded => Mode::Bounded,
            ModeArg::Unbounded => Mode::Unbounded,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitArg {
    Ones,
    Random,
}

impl From<InitArg> for MessageInit {
    fn from(m: InitArg) -> Self {
        match m {
            InitArg::Ones => MessageInit::Ones,
            InitArg::Random => MessageInit::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RegionArg {
    Remaining,
    Prior,
}

impl From<RegionArg> for RegionRule {
    fn from(m: RegionArg) -> Self {
        match m {
            RegionArg::Remaining => RegionRule::Remaining,
            RegionArg::Prior => RegionRule::Prior,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FactorArg {
    Additive,
    Product,
    Literal,
}

impl From<FactorArg> for NodeFactor {
    fn from(m: FactorArg) -> Self {
        match m {
            FactorArg::Additive => NodeFactor::Additive,
            FactorArg::Product => NodeFactor::Product,
            FactorArg::Literal => NodeFactor::Literal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct PercolationArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Edge occupation probability.
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Truncate cluster-size series at this size and report π(s).
    #[arg(long)]
    pub smax: Option<usize>,
    /// Also evaluate H at this real argument.
    #[arg(long)]
    pub z: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    /// Regions with more edges than this are sampled instead of enumerated.
    #[arg(long)]
    pub enum_threshold: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Region averaged over by unbounded messages.
    #[arg(long, value_enum)]
    pub region_rule: Option<RegionArg>,
    /// Shuffle the overcounting schedule with this seed.
    #[arg(long)]
    pub schedule_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Lorentzian broadening, z = x + i·eta.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub xmin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub xmax: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Combine incoming messages as a plain product of (z − H).
    #[arg(long, conflicts_with = "node_factor")]
    pub literal_d: bool,
    #[arg(long, value_enum)]
    pub node_factor: Option<FactorArg>,
    /// Start each grid point from the previous point's messages.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub schedule_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    /// Enumeration when the graph has few enough edges, else sampling.
    Auto,
    Exact,
    Mc,
}

#[derive(Debug, Args)]
pub struct OraclePercolationArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub p: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub kind: OracleKind,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest cluster size tracked (default: n).
    #[arg(long)]
    pub smax: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct OracleSpectrumArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ComparePercolationArgs {
    /// JSON output of `nib percolation`.
    #[arg(long)]
    pub method: PathBuf,
    /// JSON output of `nib oracle percolation`.
    #[arg(long)]
    pub oracle: PathBuf,
    /// Absolute tolerance against an enumeration oracle.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Pass band against a sampling oracle, in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub sigmas: f64,
    /// Deviations between `--sigmas` and this are flagged but pass.
    #[arg(long, default_value_t = 4.0)]
    pub flag_sigmas: f64,
}

#[derive(Debug, Args)]
pub struct CompareSpectrumArgs {
    /// Output of `nib spectrum`, JSON or CSV with its manifest alongside.
    #[arg(long)]
    pub method: PathBuf,
    /// Output of `nib oracle spectrum`, JSON or CSV with its manifest alongside.
    #[arg(long)]
    pub oracle: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let out = cli.out.as_deref();
    let result = match &cli.command {
        Command::Neigh(args) => commands::neigh(args, out),
        Command::Percolation(args) => commands::percolation(args, out),
        Command::Spectrum(args) => commands::spectrum(args, out),
        Command::Oracle(OracleCommand::Percolation(args)) => commands::oracle_percolation(args, out),
        Command::Oracle(OracleCommand::Spectrum(args)) => commands::oracle_spectrum(args, out),
        Command::Compare(CompareCommand::Percolation(args)) => compare::percolation(args, out),
        Command::Compare(CompareCommand::Spectrum(args)) => compare::spectrum(args, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
