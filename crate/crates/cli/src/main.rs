//! `funcreg`: batch front-end for multiple functional linear regression.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 input error. Failures print
//! one JSON line on stderr.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use funcreg::NoiseReading;

use crate::output::CliError;

#[derive(Debug, Parser)]
#[command(name = "funcreg", version, about = "Functional linear regression with group-SCAD selection")]
struct Cli {
    /// Worker threads for the tuning and replicate loops.
    #[arg(long, global = true, env = "FUNCREG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a curve CSV, choosing K and lambda by GCV.
    Fit(FitArgs),
    /// Predict responses for new curves with a saved model.
    Predict(PredictArgs),
    /// Write one simulated dataset.
    Simulate(SimulateArgs),
    /// Run the six-scenario simulation table.
    Table1(Table1Args),
    /// Recompute a confidence band from a saved model.
    Bands(BandsArgs),
    /// Minimum eigenvalue of the score covariance against K.
    DiagnoseLambda(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// JSON sidecar with predictor names and physical grid.
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Fix the truncation level.
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    /// Fix the penalty.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Comma-separated K values to search.
    #[arg(long, conflicts_with = "k")]
    pub k_grid: Option<String>,
    /// Comma-separated lambda values to search.
    #[arg(long, conflicts_with = "lambda")]
    pub lambda_grid: Option<String>,
    /// Replace each predictor by these derivative orders, e.g. `0,1,2,3`.
    #[arg(long)]
    pub derivatives: Option<String>,
    /// Train on the first N rows and report hold-out MSE on the rest.
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long, default_value = "funcreg-out")]
    pub out: PathBuf,
    /// Confidence level of the written bands.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Reading {
    Sigma,
    Variance,
}

impl From<Reading> for NoiseReading {
    fn from(r: Reading) -> Self {
        match r {
            Reading::Sigma => NoiseReading::Sigma,
            Reading::Variance => NoiseReading::Variance,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rho: f64,
    /// Noise level; read as a standard deviation or a variance.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, value_enum, default_value = "variance")]
    pub noise_reading: Reading,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub grid: usize,
    /// Where to write the dataset CSV.
    #[arg(long = "write-data", alias = "out")]
    pub write_data: PathBuf,
    /// Also write the true coefficient curves.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableReading {
    Sigma,
    Variance,
    Both,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long, default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    pub noise_reading: TableReading,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BandsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Predictor label or 1-based index.
    #[arg(long)]
    pub predictor: String,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Use the simulation mixing with this rho.
    #[arg(long, conflicts_with = "mixing", allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Mixing matrix, rows separated by `;`, entries by `,`.
    #[arg(long, allow_hyphen_values = true)]
    pub mixing: Option<String>,
    /// Spectrum decay: kappa_k = k^-alpha.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            return output::fail(&CliError::Input(first.trim_start_matches("error: ").to_string()));
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            return output::fail(&CliError::Input(format!("thread pool: {e}")));
        }
    }
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Table1(a) => commands::table1(&a),
        Command::Bands(a) => commands::bands(&a),
        Command::DiagnoseLambda(a) => commands::diagnose_lambda(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => output::fail(&e),
    }
}
