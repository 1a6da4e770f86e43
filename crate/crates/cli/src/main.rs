//! `caflow`: causal discovery and causal queries with autoregressive flows.
//!
//! Six subcommands: `discover` (pairwise direction by likelihood ratio),
//! `order` (exhaustive ordering search), `intervene` (Monte Carlo sampling
//! under do(x_j = a)), `counterfactual` (abduct-modify-predict on one
//! observation), `simulate` (synthetic benchmark datasets), `benchmark`
//! (direction accuracy over a families x sizes x repetitions grid).
//!
//! Every run prints one JSON report to stdout. Given identical arguments,
//! files, and seeds, reports are byte-identical except the wall-clock field.

mod commands;
mod config;
mod csv;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::Overrides;

/// Usage problems (flags, unknown names, bad config files) exit 1; data and
/// numeric problems exit 2. Both print a single-line prefixed record.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("caflow: error[usage]: {0}")]
    Usage(String),
    #[error("caflow: error[data]: {0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<caflow::Error> for CliError {
    fn from(e: caflow::Error) -> Self {
        match e {
            // Bad settings are the caller's to fix; everything else is a
            // property of the data or the numbers.
            caflow::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "caflow",
    version,
    about = "Causal discovery and causal queries with autoregressive flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide the causal direction between two columns by likelihood ratio.
    Discover(DataArgs),
    /// Rank every variable ordering by held-out log-likelihood.
    Order(DataArgs),
    /// Sample the fitted model under do(x_target = value).
    Intervene(QueryArgs),
    /// Recompute one observation with a coordinate forced to a new value.
    Counterfactual(QueryArgs),
    /// Generate a synthetic benchmark dataset as CSV.
    Simulate(SimulateArgs),
    /// Direction accuracy over a families x sample-sizes x repetitions grid.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct Base {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; omitted, an entropy-derived seed is drawn and echoed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    base: Base,
    /// Input CSV: numeric body, optional header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    base: Base,
    /// Input CSV: numeric body, optional header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Causal ordering as 1-based variable indices, e.g. "2,1,3".
    #[arg(long)]
    ordering: Option<String>,
    /// Target variable, 1-based.
    #[arg(long)]
    target: Option<usize>,
    /// Value assigned to the target.
    #[arg(long, allow_hyphen_values = true)]
    value: Option<f64>,
    /// Monte Carlo draws (intervene only).
    #[arg(long)]
    n_samples: Option<usize>,
    /// Intervention sampling mode: sequential or parallel.
    #[arg(long)]
    mode: Option<String>,
    /// Observed vector (counterfactual only), e.g. "2.0,1.5,0.8,-0.3".
    #[arg(long, allow_hyphen_values = true)]
    obs: Option<String>,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    base: Base,
    /// Family: linear, nonlinear_additive, modulated_noise,
    /// sigmoid_nonlinear_noise, highdim_pair, intervention_sem.
    #[arg(long)]
    family: Option<String>,
    /// Sample count.
    #[arg(long)]
    n: Option<usize>,
    /// Destination CSV for the dataset (required).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    base: Base,
    /// Restrict the grid to one family.
    #[arg(long)]
    family: Option<String>,
    /// Restrict the grid to one sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Repetitions per (family, sample size) cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Destination CSV for the per-repetition rows (required).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    ExitCode::from(run(&argv))
}

fn run(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => return report_clap_error(e),
    };
    let started = Instant::now();
    match dispatch(cli, argv, started) {
        Ok(()) => 0,
        Err(e) => {
            // One machine-parseable line per failure.
            eprintln!("{}", e.to_string().replace('\n', "; "));
            e.exit_code()
        }
    }
}

fn report_clap_error(e: clap::Error) -> u8 {
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        let _ = e.print();
        return 0;
    }
    let rendered = e.to_string();
    let first = rendered
        .lines()
        .next()
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ");
    eprintln!("caflow: error[usage]: {first}");
    let _ = e.print();
    1
}

fn dispatch(cli: Cli, argv: &[String], started: Instant) -> Result<(), CliError> {
    match cli.command {
        Cmd::Discover(a) => {
            let cfg = config::load(a.base.config.as_deref())?;
            let r = config::resolve(
                cfg,
                Overrides {
                    seed: a.base.seed,
                    data: a.data,
                    out: a.out,
                    ..Overrides::default()
                },
            )?;
            commands::discover(&r, argv, started)
        }
        Cmd::Order(a) => {
            let cfg = config::load(a.base.config.as_deref())?;
            let r = config::resolve(
                cfg,
                Overrides {
                    seed: a.base.seed,
                    data: a.data,
                    out: a.out,
                    ..Overrides::default()
                },
            )?;
            commands::order(&r, argv, started)
        }
        Cmd::Intervene(a) => {
            let r = resolve_query_args(a)?;
            commands::intervene(&r, argv, started)
        }
        Cmd::Counterfactual(a) => {
            let r = resolve_query_args(a)?;
            commands::counterfactual(&r, argv, started)
        }
        Cmd::Simulate(a) => {
            let cfg = config::load(a.base.config.as_deref())?;
            let r = config::resolve(
                cfg,
                Overrides {
                    seed: a.base.seed,
                    family: a.family,
                    n: a.n,
                    out: a.out,
                    ..Overrides::default()
                },
            )?;
            commands::simulate(&r, argv, started)
        }
        Cmd::Benchmark(a) => {
            let cfg = config::load(a.base.config.as_deref())?;
            let r = config::resolve(
                cfg,
                Overrides {
                    seed: a.base.seed,
                    family: a.family,
                    n: a.n,
                    reps: a.reps,
                    out: a.out,
                    ..Overrides::default()
                },
            )?;
            commands::benchmark(&r, argv, started)
        }
    }
}

fn resolve_query_args(a: QueryArgs) -> Result<config::Resolved, CliError> {
    let cfg = config::load(a.base.config.as_deref())?;
    let ordering = a
        .ordering
        .as_deref()
        .map(config::parse_index_list)
        .transpose()?;
    let mode = a.mode.as_deref().map(config::parse_mode).transpose()?;
    let obs = a.obs.as_deref().map(config::parse_f64_list).transpose()?;
    config::resolve(
        cfg,
        Overrides {
            seed: a.base.seed,
            data: a.data,
            out: a.out,
            ordering,
            target: a.target,
            value: a.value,
            n_samples: a.n_samples,
            mode,
            obs,
            ..Overrides::default()
        },
    )
}
