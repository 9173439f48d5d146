//! Flag surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "airx",
    version,
    about = "Storage-aware index builder and query engine"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Search the latency-optimal structure for a dataset and persist the index
    Build(BuildArgs),
    /// Point lookup against a persisted index
    Query(QueryArgs),
    /// Optimal index height vs round-trip time at fixed bandwidth, as CSV
    Sweep(SweepArgs),
    /// Print the analytic tall-vs-wide comparison on the two reference devices
    SimulateMotivating,
    /// Modeled lookup benchmark over sampled present keys
    Bench(BenchArgs),
    /// Estimate a device's latency and bandwidth into a profile config
    Profile(ProfileArgs),
    /// Generate a synthetic sorted key file (raw little-endian u64)
    GenKeys(GenKeysArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeArg {
    Step,
    Linear,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineArg {
    /// Indexless binary search over the persisted data layer
    Flat,
}

/// Search-space overrides shared by `build` and `sweep`.
#[derive(Args, Debug, Default, Clone)]
pub struct SpaceArgs {
    /// Regressor families to consider (default: step,linear)
    #[arg(long, value_delimiter = ',')]
    pub types: Option<Vec<TypeArg>>,
    /// Maximum number of regressor layers (default: 8; 0 = no index, fetch
    /// the whole data layer)
    #[arg(long = "max-layers")]
    pub max_layers: Option<u32>,
    /// Fanout grid for step layers (default: powers of two 4..65536)
    #[arg(long = "step-lambdas", value_delimiter = ',')]
    pub step_lambdas: Option<Vec<u64>>,
    /// Max-byte-error grid for linear layers (default: powers of two 16..1048576)
    #[arg(long = "linear-lambdas", value_delimiter = ',')]
    pub linear_lambdas: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Sorted little-endian u64 key file
    #[arg(long)]
    pub data: PathBuf,
    /// Storage profile JSON ({"latency_s": .., "bandwidth_bps": ..})
    #[arg(long)]
    pub profile: PathBuf,
    /// Output index file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub space: SpaceArgs,
    /// Worker threads for candidate evaluation (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub key: u64,
    /// Profile used to annotate the trace with modeled costs
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Print one line per storage read plus the modeled total
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sorted little-endian u64 key file
    #[arg(long)]
    pub data: PathBuf,
    /// Fixed bandwidth in bytes/second
    #[arg(long)]
    pub bandwidth: f64,
    /// Comma-separated round-trip times in seconds
    #[arg(long, value_delimiter = ',')]
    pub rtts: Vec<f64>,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    /// Number of sampled present-key lookups
    #[arg(long)]
    pub queries: u64,
    #[arg(long)]
    pub seed: u64,
    /// Also run a baseline and report the speedup
    #[arg(long)]
    pub baseline: Option<BaselineArg>,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// File to read during measurement
    #[arg(long)]
    pub target: PathBuf,
    /// Timed repetitions per transfer size
    #[arg(long, default_value_t = 5)]
    pub trials: u32,
    /// Where to write the profile JSON (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenKeysArgs {
    #[arg(long)]
    pub count: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
