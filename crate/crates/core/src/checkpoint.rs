//! Versioned JSON checkpoints holding everything inference needs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Scaler, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Seq2Graph};

pub const CHECKPOINT_FORMAT: &str = "seq2graph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// Series order the model was trained with.
    pub series: Vec<String>,
    pub scaler: Scaler,
    pub params: ModelParams<Tensor<f64>>,
}

impl Checkpoint {
    pub fn new(model: &Seq2Graph<f64>, series: Vec<String>, scaler: Scaler) -> Result<Self> {
        if series.len() != model.config.d || scaler.series_count() != model.config.d {
            return Err(Error::contract("series names and scaler must match the model's series count"));
        }
        Ok(Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            series,
            scaler,
            params: model.params.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match (value.get("format").and_then(|v| v.as_str()), value.get("version").and_then(|v| v.as_u64())) {
            (Some(CHECKPOINT_FORMAT), Some(v)) if v == CHECKPOINT_VERSION as u64 => {}
            (Some(CHECKPOINT_FORMAT), v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported version {v:?}, expected {CHECKPOINT_VERSION}"
                )))
            }
            _ => return Err(Error::Checkpoint("not a seq2graph checkpoint".into())),
        }
        let ck: Self = serde_json::from_value(value)?;
        ck.config.validate()?;
        ck.params
            .check_shapes(&ck.config)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.series.len() != ck.config.d || ck.scaler.series_count() != ck.config.d {
            return Err(Error::Checkpoint("series metadata disagrees with the config".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> Seq2Graph<f64> {
        Seq2Graph {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    /// Rejects a frame whose columns are not exactly the training series in
    /// the training order.
    pub fn check_series(&self, frame: &TimeSeriesFrame) -> Result<()> {
        check_series_order(&self.series, frame.names())
    }
}

pub fn check_series_order(expected: &[String], found: &[String]) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Schema {
            expected: expected.to_vec(),
            found: found.to_vec(),
        })
    }
}
