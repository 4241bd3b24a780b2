//! `confweld`: command-line driver for the welding laboratory.
//!
//! Exit codes are 0 for an accepted run, 1 for any error (including usage
//! errors), and 2 when a run completed but its quality diagnostics flagged it.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{RunConfig, Study, SEED_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "confweld",
    version,
    about = "Random Jordan curves by conformal welding of chaos homeomorphisms"
)]
struct Cli {
    /// Flat `key = value` file (or an earlier run's JSON manifest) overlaid
    /// before the command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weld one random homeomorphism and write the curve.
    Weld(WeldArgs),
    /// Monte Carlo tail of the Lehto integral and the L_k statistics.
    Tail(TailArgs),
    /// Covariance or moment-scaling study of the field and chaos measure.
    Stats(StatsArgs),
    /// Sample a field, its chaos measure and the circle homeomorphism.
    Gmc(GmcArgs),
    /// Annulus decomposition of the Lehto integral for one sample.
    Lehto(LehtoArgs),
    /// Quick end-to-end checks against closed forms.
    Selftest(SelftestArgs),
}

/// Flags shared by every subcommand. Unset flags fall through to the config
/// file and then to the defaults.
#[derive(Args, Debug, Serialize)]
struct Common {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    /// Base seed; the CONFWELD_SEED environment variable overrides it.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Allow beta^2 >= 2.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    exploratory: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    chaos_grid: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    modes: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SolverArgs {
    /// Lattice side of the Beltrami solver (power of two).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    /// Regularization level: |mu| is kept at or below 1 - eps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iter: Option<usize>,
    /// clamp or scale
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    regularization: Option<String>,
    /// spectral or centered_difference
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    symbol: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mollify: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    curve_samples: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct WeldArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    /// Compute the welding-identity defect (seconds to tens of seconds at G = 1024).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<bool>,
}

#[derive(Args, Debug, Serialize)]
struct TailArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Annulus ratio exponent: rho = 2^-p.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<u32>,
    /// Threshold per scale; the event is L(1, 2^-Np, 1) < N delta. Required.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_values: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_max: Option<usize>,
    /// Samples for the L_k statistics; 0 skips them.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lk_samples: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    study: Option<Study>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    lags: Option<Vec<f64>>,
    /// Dyadic levels j of the interval sizes 2^-j in the moment study.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<u32>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batches: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct GmcArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct LehtoArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<u32>,
    /// Number of annuli; read from the first entry of n_values.
    #[arg(long = "n", value_delimiter = ',')]
    #[serde(rename = "n_values", skip_serializing_if = "Option::is_none")]
    n_values: Option<Vec<usize>>,
}

#[derive(Args, Debug, Serialize)]
struct SelftestArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
}

fn flag_map(args: &impl Serialize) -> Result<Map<String, Value>> {
    match serde_json::to_value(args)? {
        Value::Object(mut m) => {
            // enum-valued flags are validated by serde against the config types
            for key in ["regularization", "symbol"] {
                if let Some(Value::String(s)) = m.get(key) {
                    let s = s.to_ascii_lowercase().replace('-', "_");
                    m.insert(key.into(), Value::String(s));
                }
            }
            Ok(m)
        }
        _ => unreachable!("argument structs serialize to objects"),
    }
}

fn run(cli: Cli) -> Result<commands::Status> {
    let flags = match &cli.command {
        Command::Weld(a) => flag_map(a)?,
        Command::Tail(a) => flag_map(a)?,
        Command::Stats(a) => flag_map(a)?,
        Command::Gmc(a) => flag_map(a)?,
        Command::Lehto(a) => flag_map(a)?,
        Command::Selftest(a) => flag_map(a)?,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), flags, std::env::var(SEED_ENV).ok())?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Weld(_) => commands::weld(&cfg),
        Command::Tail(_) => commands::tail(&cfg),
        Command::Stats(_) => commands::stats(&cfg),
        Command::Gmc(_) => commands::gmc(&cfg),
        Command::Lehto(_) => commands::lehto(&cfg),
        Command::Selftest(_) => commands::selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
