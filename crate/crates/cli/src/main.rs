use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Knockoff-based variable selection for binary outcomes.
#[derive(Debug, Parser)]
#[command(name = "afdr", version, about)]
struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the Gaussian knockoff model and write one knockoff copy.
    Knockoffs(KnockoffsArgs),
    /// Run the (aggregated) knockoff filter.
    Select(SelectArgs),
    /// Unpenalized logistic and least-squares refits on a support.
    Refit(RefitArgs),
    /// Monte Carlo evaluation on synthetic data.
    Simulate(SimulateArgs),
    /// Cross-validated prediction error table, computed or from stored results.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Name of the binary response column.
    #[arg(long, default_value = "y")]
    response: String,
}

#[derive(Debug, Args)]
struct KnockoffsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = afdr_core::knockoffs::DEFAULT_SLACK)]
    slack: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Knockoff,
    #[value(name = "knockoff+", alias = "knockoff-plus")]
    KnockoffPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatisticArg {
    Lsm,
    #[value(name = "lcd-cv")]
    LcdCv,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Target FDR level.
    #[arg(long, default_value_t = 0.1)]
    q: f64,
    /// Number of aggregated knockoff runs.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value = "knockoff+")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "lcd-cv")]
    statistic: StatisticArg,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    min_ratio: f64,
    /// Folds used to calibrate the penalty.
    #[arg(long, default_value_t = 10)]
    folds: usize,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for selection.json and selection.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    StandardizedAll,
    ContinuousOnly,
    Raw,
}

#[derive(Debug, Args)]
struct RefitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated 1-based column indices; empty for intercept only.
    #[arg(long, allow_hyphen_values = true)]
    support: String,
    #[arg(long, value_enum, default_value = "standardized-all")]
    scale: ScaleArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimMethod {
    Knockoff,
    Lasso,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// key = value scenario file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "knockoff")]
    method: SimMethod,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Dataset to evaluate; omit to render stored reports.
    #[arg(long, conflicts_with = "results")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    response: String,
    /// Stored report.json files to render.
    #[arg(long, num_args = 1..)]
    results: Vec<PathBuf>,
    /// Comma-separated: lasso, fdr-lsm, afdr-lsm, fdr-lcd-cv, afdr-lcd-cv, empty, full.
    #[arg(long, default_value = "lasso,fdr-lsm,afdr-lsm,fdr-lcd-cv,afdr-lcd-cv,empty")]
    methods: String,
    #[arg(long, default_value_t = 0.1)]
    q: f64,
    /// Runs for the aggregated methods.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value = "knockoff+")]
    variant: VariantArg,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    min_ratio: f64,
    /// Prediction-error folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Penalty-calibration folds inside each selector.
    #[arg(long, default_value_t = 10)]
    cv_folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Compute(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Compute(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (kind, msg) = match self {
            CliError::Validation(m) => ("validation", m),
            CliError::Compute(m) => ("computation", m),
        };
        write!(f, "error[{kind}]: {}", msg.replace('\n', " "))
    }
}

impl From<afdr_core::Error> for CliError {
    fn from(e: afdr_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Compute(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Knockoffs(a) => commands::knockoffs(a),
        Command::Select(a) => commands::select(a),
        Command::Refit(a) => commands::refit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
