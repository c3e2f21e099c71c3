use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "famscale", version, about = "Scaling-law fitting and compute planning for multi-exit language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for famscale::dataset::Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => famscale::dataset::Format::Csv,
            FormatArg::Json => famscale::dataset::Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKindArg {
    Runs,
    Branches,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the per-exit FLOPs overhead fraction.
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the familial law L(N, D, G) to run records.
    FitFamilial {
        #[arg(long)]
        runs: PathBuf,
        /// Records kept out of the fit and used to report prediction error.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Input format; inferred from the file extension when omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        max_starts: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the branch law L(P, Q, D) to branch records.
    FitBranch {
        #[arg(long)]
        branches: PathBuf,
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        max_starts: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the familial law at one point.
    Eval {
        /// Parameter JSON (bare parameters or a familial fit report).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        n: f64,
        #[arg(long, allow_hyphen_values = true)]
        d: f64,
        #[arg(long, allow_hyphen_values = true)]
        g: i64,
        #[command(flatten)]
        common: Common,
    },
    /// Compute-optimal frontier and loss surface.
    Frontier {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Isoloss contours.
    Contour {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Efficiency Leverage curves over a budget sweep.
    El {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// IsoFLOP experiment plan for the configured architectures.
    Plan {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate synthetic run or branch records from a known law.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<SynthKindArg>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Also write a noiseless held-out set on a disjoint grid.
        #[arg(long)]
        holdout: bool,
        #[command(flatten)]
        common: Common,
    },
}
