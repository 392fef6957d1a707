//! `dxband`: expanding-window backtests of prediction bands for life-table
//! death-count forecasts.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 the run
//! finished but some conformal horizons were under-supported.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dxband::{Execution, Sex, Transform};

use commands::{Failure, Outcome};
use config::Overrides;

#[derive(Parser)]
#[command(
    name = "dxband",
    version,
    about = "Calibrated prediction bands for life-table death counts"
)]
struct Cli {
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `alphas`, comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Write SVG plots as well.
    #[arg(long)]
    plots: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output: self.output.clone(),
            seed: self.seed,
            alphas: self.alpha.clone(),
            plots: self.plots,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Full backtest: calibration table, report grid, detail JSON, manifest.
    Run(ConfigArgs),
    /// Describe an HMD-format life-table file.
    ValidateData {
        path: PathBuf,
        #[arg(long, default_value = "female", value_parser = parse_sex)]
        sex: Sex,
    },
    /// Write the CLR or CDF-logit transform of a life-table file as CSV.
    Transform {
        path: PathBuf,
        #[arg(long, default_value = "cdf", value_parser = parse_transform)]
        method: Transform,
        #[arg(long, default_value = "female", value_parser = parse_sex)]
        sex: Sex,
        /// Clamp degenerate CDF values instead of failing.
        #[arg(long)]
        clamp: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit every configured model on the training years and dump it as JSON.
    Fit(ConfigArgs),
    /// Only the validation phase: the multiplier table.
    Calibrate(ConfigArgs),
    /// Print the report grid of a finished run.
    Report {
        /// Output directory of a previous `run`.
        #[arg(short, long)]
        input: PathBuf,
        /// CSV instead of the text table.
        #[arg(long)]
        csv: bool,
    },
}

fn parse_sex(s: &str) -> Result<Sex, String> {
    match s.to_ascii_lowercase().as_str() {
        "female" | "f" => Ok(Sex::Female),
        "male" | "m" => Ok(Sex::Male),
        _ => Err(format!("unknown sex {s:?}")),
    }
}

fn parse_transform(s: &str) -> Result<Transform, String> {
    s.parse().map_err(|e: dxband::Error| e.to_string())
}

fn execution(threads: Option<u16>) -> Result<Execution, Failure> {
    match threads {
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n as usize)
                .build_global()
                .map_err(|e| Failure::Runtime(e.into()))?;
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            eprintln!("warning: built without the `parallel` feature; running sequentially");
            Ok(Execution::Sequential)
        }
        None if cfg!(feature = "parallel") => Ok(Execution::Parallel),
        None => Ok(Execution::Sequential),
    }
}

fn dispatch(cli: Cli) -> Result<Outcome, Failure> {
    let exec = execution(cli.threads)?;
    match cli.command {
        Command::Run(a) => commands::run(&a.config, &a.overrides(), exec),
        Command::ValidateData { path, sex } => commands::validate_data(&path, sex),
        Command::Transform {
            path,
            method,
            sex,
            clamp,
            output,
        } => commands::transform(&path, sex, method, clamp, output.as_deref()),
        Command::Fit(a) => commands::fit(&a.config, &a.overrides()),
        Command::Calibrate(a) => commands::calibrate(&a.config, &a.overrides(), exec),
        Command::Report { input, csv } => commands::report(&input, csv),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::UnderSupported) => ExitCode::from(3),
        Err(f) => {
            let kind = match f {
                Failure::Config(_) => "config error",
                Failure::Runtime(_) => "error",
            };
            eprintln!("{kind}: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
