use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator. Variants are grouped by the
/// module that raises them so CLI messages can name the failing stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("traffic: {0}")]
    Traffic(String),

    #[error("netsim: {0}")]
    Netsim(String),

    #[error("pipeline: {0}")]
    Pipeline(String),

    #[error("forecast: {0}")]
    Forecast(String),

    #[error("forecast: non-finite activation in {layer}")]
    NonFinite { layer: String },

    #[error("forecast: training diverged at epoch {epoch} (loss {loss:.4e}, initial {initial:.4e})")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    #[error("rlapps: {0}")]
    Rl(String),

    #[error("orchestrator: {0}")]
    Orchestrator(String),

    #[error("orchestrator: constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("evalkit: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing upstream artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
