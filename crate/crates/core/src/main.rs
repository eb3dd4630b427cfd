use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use driftline::cli::{
    cmd_benchmark, cmd_decompose, cmd_detect_changepoints, cmd_forecast, load_config, Overrides,
};

/// Two-phase time-series forecasting: conditional mean model with automatic
/// changepoint detection, plus conditional residual intervals.
#[derive(Parser)]
#[command(name = "driftline", version, about)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Random seed recorded for reproducibility.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Prediction interval coverage (overrides the volatility config).
    #[arg(long, global = true)]
    coverage: Option<f64>,

    /// Volatility conditioning features, e.g. dow,is_event.
    #[arg(long, global = true, value_delimiter = ',')]
    volatility_features: Option<Vec<String>>,

    /// Floor MAPE denominators at this value (for series with values near 0).
    #[arg(long, global = true)]
    mape_epsilon: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and forecast a horizon; writes forecast.csv,
    /// components.csv and model.json.
    Forecast {
        /// Number of periods to forecast.
        #[arg(long)]
        horizon: usize,
    },
    /// Detect trend (and configured seasonality) changepoints; writes
    /// changepoints.csv.
    DetectChangepoints,
    /// Write the additive component decomposition over the training span.
    Decompose {
        /// Load a saved model document instead of fitting.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Rolling-window cross-validation over the spec grid; writes report.csv.
    Benchmark,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let Some(config_path) = cli.config.clone() else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let overrides = Overrides {
        output_dir: cli.output.clone(),
        seed: cli.seed,
        coverage: cli.coverage,
        volatility_features: cli.volatility_features.clone(),
        mape_epsilon: cli.mape_epsilon,
    };

    let run = || -> driftline::Result<Vec<PathBuf>> {
        let (config, out_dir) = load_config(&config_path, &overrides)?;
        match &cli.command {
            Command::Forecast { horizon } => {
                cmd_forecast(&config, &config_path, &out_dir, *horizon)
            }
            Command::DetectChangepoints => cmd_detect_changepoints(&config, &config_path, &out_dir),
            Command::Decompose { model } => {
                cmd_decompose(&config, &config_path, &out_dir, model.as_deref())
            }
            Command::Benchmark => cmd_benchmark(&config, &config_path, &out_dir),
        }
    };

    match run() {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
