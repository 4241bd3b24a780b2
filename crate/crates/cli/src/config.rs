use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use confweld_core::{Regularization, SolverConfig, Symbol};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "CONFWELD_SEED";

/// Every tunable of every subcommand. Flat so that a config file is a list
/// of `key = value` lines using the long flag names with dashes or underscores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub beta: f64,
    pub seed: u64,
    pub exploratory: bool,
    /// Cells of the chaos measure; defaults differ per subcommand.
    pub chaos_grid: Option<usize>,
    /// Fourier modes of the field; defaults to half the chaos grid.
    pub modes: Option<usize>,

    pub grid: usize,
    pub half_width: f64,
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub regularization: Regularization,
    pub symbol: Symbol,
    pub mollify: usize,
    pub curve_samples: usize,
    pub verify: bool,

    pub p: u32,
    pub delta: Option<f64>,
    pub n_values: Vec<usize>,
    pub samples: usize,
    pub k_max: usize,
    pub lk_samples: usize,

    pub study: Study,
    pub q: f64,
    pub lags: Vec<f64>,
    pub levels: Vec<u32>,
    pub batches: usize,

    pub workers: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Covariance,
    Moment,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            beta: 0.7,
            seed: 0,
            exploratory: false,
            chaos_grid: None,
            modes: None,
            grid: solver.grid,
            half_width: solver.half_width,
            eps: solver.epsilon,
            tol: solver.tol,
            max_iter: solver.max_iter,
            regularization: solver.regularization,
            symbol: solver.symbol,
            mollify: solver.mollify,
            curve_samples: solver.curve_samples,
            verify: true,
            p: 3,
            delta: None,
            n_values: vec![2, 3, 4, 5],
            samples: 1000,
            k_max: 4,
            lk_samples: 1000,
            study: Study::Covariance,
            q: 2.0,
            lags: vec![0.5, 1.0 / 6.0],
            levels: (4..=10).collect(),
            batches: 10,
            workers: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            grid: self.grid,
            half_width: self.half_width,
            epsilon: self.eps,
            tol: self.tol,
            max_iter: self.max_iter,
            regularization: self.regularization,
            symbol: self.symbol,
            curve_samples: self.curve_samples,
            mollify: self.mollify,
        }
    }

    pub fn chaos_grid_or(&self, default: usize) -> usize {
        self.chaos_grid.unwrap_or(default)
    }

    pub fn modes_for(&self, grid: usize) -> usize {
        self.modes.unwrap_or(grid / 2)
    }

    /// Layer the sources: defaults, then the config file, then flags, then
    /// the seed environment override.
    pub fn resolve(file: Option<&Path>, flags: Map<String, Value>, env_seed: Option<String>) -> Result<Self> {
        let mut merged = match serde_json::to_value(Self::default())? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            merge(
                &mut merged,
                parse_overlay(&text).with_context(|| format!("in config {}", path.display()))?,
            );
        }
        merge(&mut merged, flags);
        if let Some(s) = env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| anyhow!("{SEED_ENV}={s:?} is not a seed"))?;
            log::info!("seed overridden by {SEED_ENV}: {seed}");
            merged.insert("seed".into(), seed.into());
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged)).context("invalid configuration")?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            );
        }
        Ok(cfg)
    }
}

fn merge(base: &mut Map<String, Value>, overlay: Map<String, Value>) {
    for (k, v) in overlay {
        base.insert(k, v);
    }
}

/// Accept either a JSON manifest written by an earlier run (its `config`
/// object is used) or flat `key = value` text with `#` comments.
pub fn parse_overlay(text: &str) -> Result<Map<String, Value>> {
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(text) {
        return match obj.get("config") {
            Some(Value::Object(cfg)) => Ok(cfg.clone()),
            _ => Ok(obj),
        };
    }
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
        out.insert(k.trim().replace('-', "_"), parse_value(v.trim()));
    }
    Ok(out.into_iter().collect())
}

/// Numbers, booleans and JSON arrays parse as such; `a,b,c` becomes a list;
/// anything else is a string.
fn parse_value(v: &str) -> Value {
    if let Ok(parsed) = serde_json::from_str::<Value>(v) {
        return parsed;
    }
    if v.contains(',') {
        return Value::Array(v.split(',').map(|s| parse_value(s.trim())).collect());
    }
    Value::String(v.trim_matches('"').to_string())
}
