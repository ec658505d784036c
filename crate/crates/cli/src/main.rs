//! `ubsr`: estimation sweeps, SG runs and portfolio selection from the
//! command line.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 finished with warnings,
//! 3 numerical abort.

mod commands;
mod risk_arg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ubsr::experiments::DistSpec;
use ubsr::RiskError;

use risk_arg::RiskParams;

#[derive(Debug, Parser)]
#[command(name = "ubsr", version, about = "Shortfall and certainty-equivalent risk: estimation, sweeps and SG optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate one risk value from a sample file or a distribution.
    Estimate(EstimateArgs),
    /// Estimation error against the true value across sample sizes.
    SweepEstimation(SweepArgs),
    /// VaR and CVaR estimation errors across confidence levels.
    VarCvarSweep(VarCvarArgs),
    /// Projected stochastic-gradient risk minimization on a linear portfolio.
    Optimize(OptimizeArgs),
    /// Risk-optimal long-only portfolios on a returns table, with benchmarks.
    Portfolio(PortfolioArgs),
}

#[derive(Debug, Clone, Args)]
struct OutputArgs {
    /// Directory for CSV and JSON artifacts.
    #[arg(long, short = 'o', default_value = ".")]
    out_dir: PathBuf,
    /// Leave the timestamp and wall-clock fields out of the summary JSON.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Risk measure: one of the names below, optionally `NAME:key=value,...`,
    /// inline JSON `{"measure":..,"spec":..}` or `@file.json`.
    #[arg(long, long_help = format!("Risk measure: {}, optionally followed by `:key=value,...`; or inline JSON {{\"measure\":..,\"spec\":..}}; or @file.json", risk_arg::RISK_NAMES))]
    risk: String,
    #[command(flatten)]
    params: RiskParams,
    /// CSV whose first column holds the outcomes (a non-numeric first line is a header).
    #[arg(long, conflicts_with = "dist", required_unless_present = "dist")]
    samples: Option<PathBuf>,
    /// Outcome distribution: gaussian:MEAN,VAR, uniform:LO,HI, exponential:RATE or point:VALUE.
    #[arg(long)]
    dist: Option<DistSpec>,
    /// Number of draws from --dist.
    #[arg(long, default_value_t = 10_000)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bracket tolerance; defaults to 1/sqrt(m).
    #[arg(long)]
    delta: Option<f64>,
    /// Residual tolerance of the certainty-equivalent root.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, long_help = format!("Risk measure: {}, NAME:key=value,..., inline JSON or @file.json", risk_arg::RISK_NAMES))]
    risk: String,
    #[command(flatten)]
    params: RiskParams,
    #[arg(long)]
    dist: DistSpec,
    /// Strictly ascending sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
    m_list: Vec<usize>,
    /// Repetitions per sample size (at least 30); default 1000, or 100 with --fast.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `δ = d1/√m`.
    #[arg(long, default_value_t = 1.0)]
    d1: f64,
    /// Reference value; defaults to the closed form, else a 10⁶-sample estimate.
    #[arg(long)]
    truth: Option<f64>,
    /// Also write per-repetition errors.
    #[arg(long)]
    raw: bool,
    /// Reduced preset for quick checks.
    #[arg(long)]
    fast: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct VarCvarArgs {
    #[arg(long)]
    dist: DistSpec,
    /// Confidence levels in (0, 1); defaults to an even grid of --n-alphas levels.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 25)]
    n_alphas: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    m_list: Vec<usize>,
    /// Repetitions per cell (at least 30); default 1000, or 100 with --fast.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    fast: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    /// Full run configuration as JSON; the flags below are then ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Risk measure (default entropic-ubsr).
    #[arg(long, default_value = "entropic-ubsr")]
    risk: String,
    #[command(flatten)]
    params: RiskParams,
    /// Dimension of the seeded synthetic Gaussian market.
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    /// Step constants to grid-search.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,5")]
    c_grid: Vec<f64>,
    /// Step exponent `a` in `α_k = c/k^a`.
    #[arg(long, default_value_t = 1.0)]
    step_exponent: f64,
    /// Batch-size multiplier in `m_k = m0·k`.
    #[arg(long, default_value_t = 1)]
    m0: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run a multi-seed convergence-rate study.
    #[arg(long)]
    rate_study: bool,
    /// Seeds for the rate study; default 50, or 10 with --fast.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    fast: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PriceKind {
    Simple,
    Log,
}

#[derive(Debug, Args)]
struct PortfolioArgs {
    /// CSV `date,TICKER1,...`; cells are per-period returns unless --prices is given.
    #[arg(long)]
    returns: PathBuf,
    /// Treat the cells as prices and convert them to returns of this kind.
    #[arg(long, value_enum)]
    prices: Option<PriceKind>,
    /// Risk measures to optimize (repeatable).
    #[arg(long, required = true)]
    risk: Vec<String>,
    #[command(flatten)]
    params: RiskParams,
    /// SG configuration as JSON; overrides --horizon, --c and --seed.
    #[arg(long)]
    sg_config: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise infused into resampled returns, as a fraction of each asset's variance.
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    /// Confidence level of the minimum-CVaR benchmark.
    #[arg(long, default_value_t = 0.95)]
    benchmark_alpha: f64,
    #[command(flatten)]
    output: OutputArgs,
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

fn numerical(e: &RiskError) -> bool {
    match e {
        RiskError::BracketNotFound { .. }
        | RiskError::MaxIterations { .. }
        | RiskError::NonFinite { .. }
        | RiskError::ZeroDenominator(_)
        | RiskError::NotPositiveDefinite => true,
        RiskError::Iteration { source, .. } => numerical(source),
        _ => false,
    }
}

impl From<RiskError> for Failure {
    fn from(e: RiskError) -> Self {
        Failure {
            code: if numerical(&e) { 3 } else { 1 },
            message: e.to_string(),
        }
    }
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Clean,
    Warnings(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::SweepEstimation(a) => commands::sweep(a),
        Command::VarCvarSweep(a) => commands::var_cvar(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Portfolio(a) => commands::portfolio(a),
    };
    match result {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Warnings(w)) => {
            eprintln!("warning: {w}");
            ExitCode::from(2)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
