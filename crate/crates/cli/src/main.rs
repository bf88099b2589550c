//! `hetqr` command-line tool.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 malformed input
//! or flags, 3 solver failure.

mod fit;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetqr::estimator::Method;
use hetqr::Error;

#[derive(Parser)]
#[command(
    name = "hetqr",
    version,
    about = "Penalized quantile regression under heterogeneous sparsity"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV file (header row, response in the first column).
    Fit(FitArgs),
    /// Run a simulation study and write summary tables.
    Simulate(SimulateArgs),
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',', required = true)]
    taus: Vec<f64>,
    /// Optional comma-separated loss weights, one per level.
    #[arg(long, value_delimiter = ',')]
    pis: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Fixed tuning parameter.
    #[arg(long, conflicts_with = "tune")]
    lambda: Option<f64>,
    /// `cv:<k>` or `valid:<csv>`. Penalized methods default to `cv:3`.
    #[arg(long)]
    tune: Option<String>,
    /// Comma-separated candidate λ values for tuning.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Seed for the cross-validation folds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_outer_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Write the fit as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// hetero6, hetero100, block-<ar|cs>-<normal|t3|exp>[-p<size>], highdim-<ar|cs>[-<error>]
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for summary.csv, summary.txt and records.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Key-value TOML file with any of the settings above plus taus, lambdas,
    /// lambda_min, lambda_max, lambda_count, valid_factor, test_factor,
    /// max_outer_iters and tol. Flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with its exit code.
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn output(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Solver { .. } | Error::AllFitsFailed => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: could not start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Fit(args) => fit::run(args),
        Command::Simulate(args) => simulate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
