use thiserror::Error;

/// Errors produced by the welding laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("aliasing: grid of {grid} points cannot resolve {modes} modes (need grid >= 2 * modes)")]
    Aliasing { modes: usize, grid: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("inverse temperature beta = {beta} has beta^2 >= 2; the chaos measure degenerates (use exploratory mode for measure-only experiments)")]
    Supercritical { beta: f64 },

    #[error("moment of order q = {q} is infinite for beta = {beta}: tau(I) has finite moments only for q < 2/beta^2 = {limit}")]
    MomentOutOfRange { q: f64, beta: f64, limit: f64 },

    #[error("degenerate homeomorphism: increment {index} is not strictly positive")]
    Degenerate { index: usize },

    #[error("Beltrami iteration did not converge in {iterations} iterations (last relative delta {last_delta:e})")]
    NotConverged {
        iterations: usize,
        last_delta: f64,
        history: Vec<crate::beltrami::IterationRecord>,
    },

    #[error("map is not injective: {0}")]
    NonInjective(String),

    #[error("welding run is flagged: {0}")]
    Flagged(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
