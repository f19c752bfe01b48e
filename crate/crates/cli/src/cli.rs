//! Command-line syntax.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Trace generation, request-type selection, simulation and protocol
/// checking for fine-grain coherence specialization.
///
/// Settings come from built-in defaults, then the file given by --config,
/// then flags. Exit status: 0 on success, 1 when a stage fails, 2 on a
/// usage error, 3 when the checker finds violations or deadlocks.
#[derive(Debug, Parser)]
#[command(name = "fcssim", version)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write microbenchmark traces.
    Generate(Common),
    /// Choose request types for a trace under each configuration.
    Select(TraceArgs),
    /// Simulate a trace under each configuration and print metrics.
    Simulate(TraceArgs),
    /// Explore the protocol state space of a tiny system.
    Check {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Combine metrics CSV files and normalize them to a baseline.
    Report {
        #[command(flatten)]
        common: Common,
        /// Metrics CSV files written by `simulate` or `pipeline`.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// Generate, select, simulate and report in one go.
    Pipeline(Common),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Benchmarks, comma separated (flex-v-s, flex-o-wt, flex-oa-wta, prod-cons).
    #[arg(long)]
    pub bench: Option<String>,
    /// Configurations, comma separated (SMG, SMD, SDG, SDD, FCS, FCS+fwd, FCS+pred).
    #[arg(long)]
    pub configs: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u32>,
    #[arg(long)]
    pub cores_cpu: Option<u16>,
    #[arg(long)]
    pub cores_gpu: Option<u16>,
    #[arg(long)]
    pub partition_words: Option<u32>,
    /// One sparse access per this many partition words.
    #[arg(long)]
    pub sparse_ratio: Option<u32>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format on stdout: csv or text.
    #[arg(long)]
    pub format: Option<String>,
    /// Write each selection map next to the metrics.
    #[arg(long)]
    pub dump_selection: bool,
    /// Write each run's message log next to the metrics.
    #[arg(long)]
    pub dump_msglog: bool,
    /// Configuration the normalized table divides by.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Print the effective settings as a loadable file and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trace file to use instead of generating one from --bench.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Selection map to use instead of selecting (simulate only; one configuration).
    #[arg(long)]
    pub selection: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub cores: Option<usize>,
    #[arg(long)]
    pub addresses: Option<usize>,
    #[arg(long)]
    pub words_per_line: Option<u32>,
    /// Feature sets, comma separated (baseline, fwd, pred); the first is the ratio base.
    #[arg(long)]
    pub features: Option<String>,
    /// Accesses each core may issue.
    #[arg(long)]
    pub ops_per_core: Option<u8>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub state_budget: Option<usize>,
    #[arg(long)]
    pub max_forward_retries: Option<u32>,
    /// Seeded protocol bugs, comma separated (skip-revoke, skip-sharer-invalidate, drop-nack-retry).
    #[arg(long)]
    pub mutations: Option<String>,
    /// Explore depth-first.
    #[arg(long)]
    pub depth_first: bool,
}
