//! Command-line pipeline: simulate, fit, diagnose, forecast, risk, report
//! and serve.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 data error,
//! 4 convergence gate failure.

mod commands;
mod tables;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use salmon_lcm::dataio::DataError;
use salmon_lcm::forecast::{ForecastError, DEFAULT_GRID};
use salmon_service::ServiceError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_GATE: i32 = 4;

/// R̂ at or above which `fit` fails its convergence gate.
pub const RHAT_GATE: f64 = 1.1;

#[derive(Debug, Parser)]
#[command(name = "salmon-lcm", version, about = "Atlantic salmon life-cycle stock assessment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with known truth.
    Simulate(SimulateArgs),
    /// Sample the posterior and write chains plus a convergence table.
    Fit(FitArgs),
    /// Convergence table of a chains file.
    Diagnose(DiagnoseArgs),
    /// Forecast trajectories under one catch scenario.
    Forecast(ForecastArgs),
    /// Conservation-limit risk over a grid of catch scenarios.
    Risk(RiskArgs),
    /// Serve the scenario API over HTTP.
    Serve(ServeArgs),
    /// Plot-ready time series and correlation tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Manifest whose configuration is simulated; the desk-scale
    /// configuration when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory of the bundle.
    #[arg(long)]
    pub out: PathBuf,
    /// Emit latent values without observation noise.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    /// Sweeps after burn-in.
    #[arg(long, default_value_t = 2_500_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 500)]
    pub thin: usize,
    /// Comma-separated monitor groups, e.g. `theta3,rho3,h`.
    #[arg(long, value_delimiter = ',')]
    pub monitor: Vec<String>,
    /// Output directory for `chains.bin` and `convergence.csv`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Write outputs and exit 0 even if R̂ reaches the gate.
    #[arg(long)]
    pub no_gate: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Chains file written by `fit`.
    pub chains_file: PathBuf,
    /// Also write `convergence.csv` to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Inputs shared by the commands that forecast from a fitted posterior.
#[derive(Debug, Args)]
pub struct PosteriorArgs {
    /// Chains file written by `fit`.
    pub chains_file: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Seed of the forecast noise; scenarios share it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Posterior draws used, spread evenly over the chains.
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    /// Compare spawner eggs rather than return eggs with the limits.
    #[arg(long)]
    pub spawner_eggs: bool,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    /// West Greenland quota in tonnes.
    #[arg(long, default_value_t = 0.0)]
    pub grid: f64,
    /// Faroes quota in tonnes.
    #[arg(long, default_value_t = 0.0)]
    pub grid_fa: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    /// West Greenland quotas in tonnes.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub grid: Vec<f64>,
    /// Faroes quotas in tonnes.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub grid_fa: Vec<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Listen on every interface instead of loopback only.
    #[arg(long)]
    pub public: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Chains file written by `fit`.
    pub chains_file: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Convergence gate failure; outputs were still written.
#[derive(Debug)]
pub struct GateFailed {
    pub name: String,
    pub rhat: f64,
}

impl std::fmt::Display for GateFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "convergence gate failed: R̂ of {} is {:.4} (gate {RHAT_GATE})",
            self.name, self.rhat
        )
    }
}

impl std::error::Error for GateFailed {}

/// Usage error found after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<GateFailed>() {
            return EXIT_GATE;
        }
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<ForecastError>() {
            return match e {
                ForecastError::ConfigMismatch
                | ForecastError::BoundaryLength { .. }
                | ForecastError::BoundaryShape { .. }
                | ForecastError::IncompleteBoundary(_)
                | ForecastError::MissingMeanWeight(_)
                | ForecastError::NoDraws => EXIT_DATA,
                ForecastError::InvalidScenario(_) => EXIT_USAGE,
                ForecastError::Lifecycle(_) => EXIT_FAILURE,
            };
        }
        if let Some(ServiceError::Data(_)) = cause.downcast_ref::<ServiceError>() {
            return EXIT_DATA;
        }
    }
    EXIT_FAILURE
}

/// Parse `argv`, run the command and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
