use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use climstar::cluster::Scheme;
use climstar::distance::Metric;
use climstar::eval::LossGranularity;
use climstar::mcs::McsStatistic;
use climstar::panel::PanelFormat;
use climstar::weights::WeightKind;

mod commands;
mod config;

use config::RunConfig;

/// Exit codes: 0 success, 2 configuration or validation error, 3 numerical
/// failure.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<climstar::Error> for CliError {
    fn from(e: climstar::Error) -> Self {
        CliError {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "climstar", version, about = "Clustering and spatio-temporal forecasting of country temperature panels")]
struct Cli {
    #[command(flatten)]
    global: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override keys of the run configuration.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML run configuration
    #[arg(short, long, global = true, env = "CLIMSTAR_CONFIG")]
    config: Option<PathBuf>,
    /// Temperature panel CSV (long or wide)
    #[arg(long, global = true)]
    panel: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<PanelFormat>,
    /// Contiguity edge list `country_a,country_b`
    #[arg(long, global = true)]
    adjacency: Option<PathBuf>,
    /// Country metadata `country,name,zone,area`
    #[arg(long, global = true)]
    countries: Option<PathBuf>,
    /// Output directory
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(short = 'j', long, global = true)]
    workers: Option<usize>,
    /// Significance level of the slope screen
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Last training year
    #[arg(long, global = true)]
    origin: Option<i32>,
    /// Forecast horizon in years
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true, value_parser = parse_granularity)]
    granularity: Option<LossGranularity>,
    /// Confidence-set significance level
    #[arg(long, global = true)]
    mcs_alpha: Option<f64>,
    /// Bootstrap replications
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Bootstrap block length
    #[arg(long, global = true)]
    block: Option<usize>,
    #[arg(long, global = true, value_parser = parse_statistic)]
    statistic: Option<McsStatistic>,
    /// Bootstrap seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-country linear trends and slope significance
    Trends,
    /// Cluster the countries under one scheme
    Cluster {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        /// `K` (K clusters of at least min-size), `groups:K`, `clusters:K`,
        /// `height:H` or `auto`
        #[arg(long)]
        cut: Option<String>,
        #[arg(long)]
        min_size: Option<usize>,
    },
    /// Write one of the distance matrices
    Distances {
        #[arg(long, value_parser = parse_metric)]
        metric: Metric,
    },
    /// Build a spatial weight matrix
    Weights {
        #[arg(long, value_parser = parse_kind)]
        kind: WeightKind,
    },
    /// Fit a STAR(1,1) model on the whole panel
    Fit {
        #[arg(long, value_parser = parse_kind)]
        kind: WeightKind,
    },
    /// Fit up to --origin and forecast --horizon years
    Forecast {
        #[arg(long, value_parser = parse_kind, default_value = "dA")]
        kind: WeightKind,
    },
    /// In-sample and out-of-sample comparison of all models
    Evaluate,
    /// Model confidence set on a loss file, or on the out-of-sample losses
    Mcs {
        /// Long CSV with columns `model,loss` (rows in period order)
        #[arg(long)]
        losses: Option<PathBuf>,
    },
}

fn parse_format(s: &str) -> Result<PanelFormat, String> {
    match s.to_ascii_lowercase().as_str() {
        "auto" => Ok(PanelFormat::Auto),
        "long" => Ok(PanelFormat::Long),
        "wide" => Ok(PanelFormat::Wide),
        _ => Err(format!("unknown panel format {s:?} (auto, long, wide)")),
    }
}

fn parse_granularity(s: &str) -> Result<LossGranularity, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "period" | "per_period" => Ok(LossGranularity::PerPeriod),
        "observation" | "per_observation" => Ok(LossGranularity::PerObservation),
        _ => Err(format!("unknown granularity {s:?} (per_period, per_observation)")),
    }
}

fn parse_statistic(s: &str) -> Result<McsStatistic, String> {
    s.parse().map_err(|e: climstar::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: climstar::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<WeightKind, String> {
    s.parse().map_err(|e: climstar::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s.to_ascii_lowercase().as_str() {
        "slope" => Ok(Metric::Slope),
        "diff" | "euclidean" => Ok(Metric::Diff),
        "hamming" | "sign" => Ok(Metric::Hamming),
        _ => Err(format!("unknown metric {s:?} (slope, diff, hamming)")),
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let Overrides {
            config: _,
            panel,
            format,
            adjacency,
            countries,
            out,
            workers,
            alpha,
            origin,
            horizon,
            granularity,
            mcs_alpha,
            replications,
            block,
            statistic,
            seed,
            verbose: _,
        } = self;
        if let Some(v) = panel {
            cfg.data.panel = Some(v.clone());
        }
        if let Some(v) = format {
            cfg.data.format = *v;
        }
        if let Some(v) = adjacency {
            cfg.data.adjacency = Some(v.clone());
        }
        if let Some(v) = countries {
            cfg.data.countries = Some(v.clone());
        }
        if let Some(v) = out {
            cfg.out = v.clone();
        }
        if let Some(v) = workers {
            cfg.workers = *v;
        }
        if let Some(v) = alpha {
            cfg.pipeline.alpha = *v;
        }
        let eval = &mut cfg.evaluation;
        if let Some(v) = origin {
            eval.origin = *v;
        }
        if let Some(v) = horizon {
            eval.horizon = *v;
        }
        if let Some(v) = granularity {
            eval.granularity = *v;
        }
        if let Some(v) = mcs_alpha {
            eval.mcs.alpha = *v;
        }
        if let Some(v) = replications {
            eval.mcs.replications = *v;
        }
        if let Some(v) = block {
            eval.mcs.block_length = *v;
        }
        if let Some(v) = statistic {
            eval.mcs.statistic = *v;
        }
        if let Some(v) = seed {
            eval.mcs.seed = *v;
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.global.apply(&mut cfg);
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    }
    match cli.command {
        Command::Trends => commands::trends(&cfg),
        Command::Cluster { scheme, cut, min_size } => commands::cluster(cfg, scheme, cut.as_deref(), min_size),
        Command::Distances { metric } => commands::distances(&cfg, metric),
        Command::Weights { kind } => commands::weights(&cfg, kind),
        Command::Fit { kind } => commands::fit(&cfg, kind),
        Command::Forecast { kind } => commands::forecast(&cfg, kind),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Mcs { losses } => commands::mcs(&cfg, losses.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
