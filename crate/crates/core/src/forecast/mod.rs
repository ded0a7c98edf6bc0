//! One-step traffic forecasting: series decomposition, FFT auto-correlation,
//! an encoder/decoder model trained by reverse-mode differentiation, and
//! naive baselines.

pub mod autocorr;
pub mod baselines;
pub mod decomp;
pub mod model;
pub mod tape;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use autocorr::{autocorrelation, time_delay_aggregate, AutoCorrConfig};
pub use baselines::{baseline_moving_average, baseline_seasonal_naive};
pub use decomp::{decompose, Decomposition};
pub use model::{ForecastModel, ModelConfig, TrendInit};
pub use tape::{Mat, Padding};
pub use train::{train, TrainConfig};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::pipeline::Normalization;

pub const CHECKPOINT_KIND: &str = "forecaster";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    normalization: Normalization,
    history: Vec<f64>,
}

pub fn save_model(model: &ForecastModel, path: &Path) -> Result<()> {
    if !model.trained {
        return Err(Error::Checkpoint("refusing to save an untrained forecaster".into()));
    }
    let header = Header { config: model.config.clone(), normalization: model.normalization, history: model.history.clone() };
    let tensors: Vec<(&str, &Mat)> = model.params.names.iter().map(String::as_str).zip(&model.params.tensors).collect();
    checkpoint::write(path, CHECKPOINT_KIND, &header, &tensors)
}

pub fn load_model(path: &Path) -> Result<ForecastModel> {
    let (header, tensors): (Header, _) = checkpoint::read(path, CHECKPOINT_KIND)?;
    ForecastModel::from_parts(header.config, tensors, header.normalization, header.history)
}

pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l}")])?;
    }
    w.flush()?;
    Ok(())
}
