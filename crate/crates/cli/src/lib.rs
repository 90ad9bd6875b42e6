//! Command-line pipeline: simulate, fit, compare families, select the
//! hurdle threshold, diagnose and predict.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use zigam_core::engine::StructuralForm;
use zigam_core::likelihoods::Family;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "zigam", version, about = "Two-part zero-inflated spatio-temporal models")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known parameters.
    Simulate(SimulateArgs),
    /// Fit the binary and count components and select the threshold.
    Fit(FitArgs),
    /// Compare count families (or structural forms) by DIC and WAIC.
    CompareFamilies(CompareArgs),
    /// Re-run threshold selection from a fit directory.
    SelectThreshold(SelectArgs),
    /// Adequacy diagnostics (DIC, WAIC, CPO, PIT) for a fit directory.
    Diagnose(DiagnoseArgs),
    /// Exceedance probabilities on a prediction grid.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Seed for every random draw of the subcommand.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Events CSV.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Region polygons (GeoJSON FeatureCollection with a `name` property).
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Population CSV with columns region,year,population.
    #[arg(long)]
    pub population: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Structural form: baseline, i or ii.
    #[arg(long)]
    pub form: Option<StructuralForm>,
    /// Count family: poisson, negbinomial or gpoisson.
    #[arg(long)]
    pub family: Option<Family>,
    /// Longest mesh edge inside the domain (degrees).
    #[arg(long)]
    pub max_edge: Option<f64>,
    /// Minimum spacing between data locations used as mesh nodes (degrees).
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Spline basis size under form I.
    #[arg(long)]
    pub knots: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of events.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub form: Option<StructuralForm>,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub dispersion: Option<f64>,
    /// Target number of mesh nodes of the generating field.
    #[arg(long)]
    pub mesh_nodes: Option<usize>,
    /// Number of years.
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub first_year: Option<i32>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Maximum number of threshold candidates.
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Posterior samples for the occurrence probabilities.
    #[arg(long)]
    pub pi_samples: Option<usize>,
    /// Posterior samples per WAIC evaluation.
    #[arg(long)]
    pub waic_samples: Option<usize>,
    /// Posterior samples for the adequacy report.
    #[arg(long)]
    pub diagnose_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CompareBy {
    Family,
    Form,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fit directory whose selected threshold defines the count response.
    /// Without it every observation enters the count model.
    #[arg(long)]
    pub fit_dir: Option<PathBuf>,
    /// Compare count families or structural forms.
    #[arg(long, value_enum, default_value_t = CompareBy::Family)]
    pub by: CompareBy,
    /// Families to compare (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<Family>>,
    /// Forms to compare (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub forms: Option<Vec<StructuralForm>>,
    /// Posterior samples per score.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit_dir: PathBuf,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub waic_samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub fit_dir: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub fit_dir: PathBuf,
    /// Count threshold k of P(count > k).
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<i64>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Years to predict (comma separated); defaults to the last fitted year.
    #[arg(long, value_delimiter = ',')]
    pub years: Option<Vec<i32>>,
}

/// Configures the thread pool and runs the subcommand.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    let threads = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    // A pool configured earlier in the process (for example by tests) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(cfg, a),
        Command::Fit(a) => commands::fit::run(cfg, a),
        Command::CompareFamilies(a) => commands::compare::run(cfg, a),
        Command::SelectThreshold(a) => commands::threshold::run(cfg, a),
        Command::Diagnose(a) => commands::diagnose::run(cfg, a),
        Command::Predict(a) => commands::predict::run(cfg, a),
    }
}
