//! `gmmb` — clustering of bounded data from the command line.

mod bundle;
mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_HELP: &str = "Exit codes:
  0  success
  2  configuration error (flags, config file, unreadable input)
  3  data validation error (values outside the declared open support)
  4  degenerate fit (empty component, singular covariance, no fit succeeded)";

/// Errors mapped to the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Validation(String),
    Degenerate(String),
}

impl CliError {
    fn config<S: Into<String>>(msg: S) -> Self {
        CliError::Config(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Degenerate(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Validation(m) | CliError::Degenerate(m) => m,
        }
    }
}

impl From<gmmb::Error> for CliError {
    fn from(e: gmmb::Error) -> Self {
        use gmmb::Error::*;
        match &e {
            ValidationFailed { .. } | OutsideSupport { .. } => CliError::Validation(e.to_string()),
            DegenerateFit(_) | SingularCovariance { .. } | EmptyClusterInit | AllFitsFailed => {
                CliError::Degenerate(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gmmb",
    version,
    about = "Model-based clustering of bounded data via range-power transformed Gaussian mixtures",
    after_help = EXIT_HELP
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Shared run options; a TOML config file provides defaults and flags
/// override it.
#[derive(Args, Debug)]
pub struct RunArgs {
    /// TOML configuration file (flags override its values)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV file
    #[arg(long)]
    data: Option<PathBuf>,
    /// Columns to model, comma-separated (default: all)
    #[arg(long)]
    columns: Option<String>,
    /// Treat the first CSV row as data, not a header
    #[arg(long)]
    no_header: bool,
    /// Per-column bounds, e.g. "x:lower=0", "x:lower=0,upper=1", "x:none";
    /// repeatable
    #[arg(long = "bounds")]
    bounds: Vec<String>,
    /// Model code(s), e.g. V or EEE,VVE,VVV
    #[arg(long)]
    model: Option<String>,
    /// Component count(s): "2", "1,3,5", or "1..5"
    #[arg(long = "G")]
    g: Option<String>,
    /// RNG seed for the k-means initialization
    #[arg(long)]
    seed: Option<u64>,
    /// Relative log-likelihood stopping tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Maximum ECM iterations
    #[arg(long)]
    max_iter: Option<usize>,
    /// Move values sitting exactly on a declared bound strictly inside
    #[arg(long)]
    nudge_boundary: bool,
    /// Output directory (default: gmmb-out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit one model and write summary.json + observations.csv
    Fit(RunArgs),
    /// Fit a (G, model) grid and write sweep.csv plus the BIC winner's files
    Sweep(RunArgs),
    /// Evaluate a fitted univariate density on a grid (original scale)
    Density {
        /// summary.json from a previous fit
        #[arg(long)]
        fit: PathBuf,
        /// Grid start (strictly inside the support)
        #[arg(long)]
        min: f64,
        /// Grid end (strictly inside the support)
        #[arg(long)]
        max: f64,
        /// Number of grid points
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Output CSV file (default: gmmb-out/density.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Back-transformed cluster means per variable from a saved fit
    Profiles {
        /// summary.json from a previous fit
        #[arg(long)]
        fit: PathBuf,
        /// Output CSV file (default: gmmb-out/profiles.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Marginal transformation powers and transformed data columns
    Transform(RunArgs),
    /// Apply a saved fit's MAP rule to new rows
    Classify {
        /// summary.json from a previous fit
        #[arg(long)]
        fit: PathBuf,
        /// CSV file with rows to classify
        #[arg(long)]
        data: PathBuf,
        /// Treat the first CSV row as data, not a header
        #[arg(long)]
        no_header: bool,
        /// Output CSV file (default: gmmb-out/classification.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the version
    Version,
}

fn resolve(args: &RunArgs) -> Result<config::RunConfig, CliError> {
    let file = config::load_file_config(args.config.as_deref())?;
    config::RunConfig::resolve(file, args)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Fit(args) => commands::cmd_fit(&resolve(&args)?),
        Cmd::Sweep(args) => commands::cmd_sweep(&resolve(&args)?),
        Cmd::Density {
            fit,
            min,
            max,
            points,
            out,
        } => commands::cmd_density(
            &fit,
            min,
            max,
            points,
            &commands::default_out_file(&out, "density.csv"),
        ),
        Cmd::Profiles { fit, out } => {
            commands::cmd_profiles(&fit, &commands::default_out_file(&out, "profiles.csv"))
        }
        Cmd::Transform(args) => commands::cmd_transform(&resolve(&args)?),
        Cmd::Classify {
            fit,
            data,
            no_header,
            out,
        } => commands::cmd_classify(
            &fit,
            &data,
            !no_header,
            &commands::default_out_file(&out, "classification.csv"),
        ),
        Cmd::Version => {
            println!("gmmb {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
