//! `scolab` — run sweeps, verification batteries and one-off computations.
//!
//! Exit status: 0 on success, 1 when a verification or invariant check
//! fails (or a run aborts), 2 on usage or configuration errors.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "scolab", version, about = "Stochastic convex optimization generalization lab")]
pub struct Cli {
    /// JSON configuration file (unknown keys are rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to $SCOLAB_OUT, then ./scolab-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed override (master seed for sweeps and verification).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// -v for info, -vv for debug logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summarize an instance and run its invariant battery.
    Instance {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, default_value_t = 1000)]
        probes: usize,
    },
    /// Build a greedy packing net and save it as net.json.
    Net {
        #[arg(long, default_value = "l2")]
        family: String,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Packing separation; the cover radius is twice this.
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
    },
    /// Rademacher complexity: inverse, closed-form bound, exact or Monte Carlo.
    Rad(RadArgs),
    /// Minimize the empirical risk of one seeded sample.
    Erm {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Certificate and divergence report at a point x.
    Divergence {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Point as a JSON array, e.g. '[0.5]'.
        #[arg(long)]
        x: String,
        #[arg(long)]
        n: usize,
        /// Packing separation of the net used for representativeness.
        #[arg(long, default_value_t = 0.05)]
        net_eps: f64,
    },
    /// Run the concentration and conditional-claim battery of a config.
    Verify,
    /// Run a full sweep from a config.
    Sweep,
    /// Regenerate results.csv and plots.svg from a results.json.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Coin,
    Hard,
    Quadratic,
    Appendix,
}

/// Instance selection by flags; `--config` with an instance descriptor takes
/// precedence when given.
#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    #[arg(long, value_enum, default_value = "coin")]
    pub family: FamilyArg,
    #[arg(long)]
    pub eps0: Option<f64>,
    /// Dimension (hard family).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of directions (hard family).
    #[arg(long)]
    pub m: Option<usize>,
    /// Centers as a JSON array of vectors (quadratic family).
    #[arg(long)]
    pub centers: Option<String>,
    #[arg(long)]
    pub norm: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RadArgs {
    #[arg(long, default_value = "l2")]
    pub family: String,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Print the smallest n whose bound is below this value.
    #[arg(long, conflicts_with_all = ["bound", "sample"])]
    pub inverse: Option<f64>,
    /// Print the closed-form bound at this n.
    #[arg(long, conflicts_with = "sample")]
    pub bound: Option<usize>,
    /// Sample as a JSON array of dual-ball vectors.
    #[arg(long)]
    pub sample: Option<String>,
    /// Monte-Carlo trials; exact enumeration when omitted.
    #[arg(long, requires = "sample")]
    pub mc: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
