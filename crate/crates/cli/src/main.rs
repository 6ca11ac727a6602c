use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod plot;

/// Combine, score and backtest probabilistic forecasts by vertical,
/// horizontal or angular pooling.
#[derive(Parser, Debug)]
#[command(name = "angular-pool", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pool forecasts into one CDF (written as JSON).
    Combine(CombineArgs),
    /// Score forecasts against observations.
    Score(ScoreArgs),
    /// Run an expanding-window backtest.
    Backtest(BacktestArgs),
    /// Fit weights, angles and method parameters at one origin.
    Optimize(OptimizeArgs),
    /// Check the pooling theorems on random inputs.
    Verify(VerifyArgs),
    /// Emit curve points as CSV for plotting.
    ExportPlotData(PlotArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct HubInput {
    /// Hub-format forecast CSV; repeat for several teams. The team is taken
    /// from a `model` column, or else the file name.
    #[arg(long = "forecasts", value_name = "CSV")]
    pub forecasts: Vec<PathBuf>,
    /// Truth CSV with columns date,location,value.
    #[arg(long, value_name = "CSV")]
    pub truth: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionArg {
    Vertical,
    Horizontal,
    Angular,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggArg {
    Mean,
    Weighted,
    Median,
    Trimmed,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimArg {
    Exterior,
    Interior,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteArg {
    Exact,
    Grid,
}

#[derive(Args, Debug)]
pub struct CombineArgs {
    /// CDF JSON files (`{"knots": [[x, p], ...]}`).
    #[arg(value_name = "CDF")]
    pub inputs: Vec<PathBuf>,
    /// Take members from one cell of a hub CSV instead of CDF files.
    #[arg(long = "hub", value_name = "CSV", conflicts_with = "inputs")]
    pub hub: Vec<PathBuf>,
    #[arg(long, requires = "hub")]
    pub series: Option<String>,
    /// Forecast date of the cell (YYYY-MM-DD).
    #[arg(long, requires = "hub")]
    pub origin: Option<String>,
    #[arg(long, requires = "hub")]
    pub horizon: Option<u32>,
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    /// Angle in degrees; required for angular pooling.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long = "agg", value_enum, default_value = "mean")]
    pub agg: AggArg,
    #[arg(long, value_enum, default_value = "exterior")]
    pub trim: TrimArg,
    /// Trim fraction in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub fraction: f64,
    /// JSON weights: an array in input order or an object keyed by member.
    #[arg(long, value_name = "JSON")]
    pub weights_file: Option<PathBuf>,
    /// Anchors for the grid route.
    #[arg(long, default_value_t = angular_pool::DEFAULT_GRID_POINTS)]
    pub m: usize,
    /// Angular construction: the exact link route or the line grid.
    #[arg(long, value_enum)]
    pub route: Option<RouteArg>,
    /// Also build the other angular route and report the sup-norm gap.
    #[arg(long)]
    pub check_exact: bool,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// CDF JSON files scored against `--observation`.
    #[arg(value_name = "CDF")]
    pub inputs: Vec<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub observation: Option<f64>,
    #[command(flatten)]
    pub hub: HubInput,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub hub: HubInput,
    /// Backtest configuration JSON.
    #[arg(long, value_name = "JSON")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub hub: HubInput,
    #[arg(long, value_name = "JSON")]
    pub config: PathBuf,
    #[arg(long)]
    pub series: String,
    /// Fit using everything observed up to this date (YYYY-MM-DD).
    #[arg(long)]
    pub origin: String,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteArg {
    Mean,
    Variance,
    Crps,
    Median,
    Pdf,
    Limits,
    All,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Member count for the median suite (odd counts 3, 5, 7 by default).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = angular_pool::DEFAULT_GRID_POINTS)]
    pub m: usize,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Cdf,
    Pdf,
    Reliability,
    ThetaSweep,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub what: PlotKind,
    /// CDF JSON files.
    #[arg(value_name = "CDF")]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub hub: HubInput,
    /// Evaluation points for cdf/pdf exports (cdf defaults to the knots).
    #[arg(long)]
    pub points: Option<usize>,
    /// Half-width of the centered difference for pdf exports.
    #[arg(long)]
    pub h: Option<f64>,
    /// Lower end of the cdf/pdf grid (defaults to the support).
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<f64>,
    /// Reliability of a single team rather than a pool.
    #[arg(long)]
    pub team: Option<String>,
    /// Pool used for reliability exports.
    #[arg(long, value_enum, default_value = "horizontal")]
    pub direction: DirectionArg,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// Failure reported as `error[code]: message`.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        CliError { code: code.into(), message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }
}

impl From<angular_pool::Error> for CliError {
    fn from(e: angular_pool::Error) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        angular_pool::Error::from(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        angular_pool::Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        angular_pool::Error::from(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("ANGULAR_POOL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::usage(format!("ANGULAR_POOL_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new("threads", e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Combine(a) => commands::combine(&a),
        Command::Score(a) => commands::score(&a),
        Command::Backtest(a) => commands::backtest(&a),
        Command::Optimize(a) => commands::optimize(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::ExportPlotData(a) => plot::export(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message.replace('\n', "; "));
            ExitCode::FAILURE
        }
    }
}
