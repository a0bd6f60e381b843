use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::TimeSeriesFrame;

/// Per-series min-max normalization fitted on a row range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Series that were constant on the fit range (`max` set to `min + 1`).
    pub constant: Vec<bool>,
}

impl Scaler {
    pub fn fit(frame: &TimeSeriesFrame, train_range: Range<usize>) -> Result<Self> {
        if train_range.is_empty() || train_range.end > frame.len() {
            return Err(Error::contract(format!(
                "scaler fit range {train_range:?} must be non-empty and within 0..{}",
                frame.len()
            )));
        }
        let d = frame.series_count();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in &frame.rows()[train_range] {
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        let mut constant = vec![false; d];
        for k in 0..d {
            if max[k] <= min[k] {
                log::warn!(
                    "series {:?} is constant on the training range; scaling by 1",
                    frame.names()[k]
                );
                max[k] = min[k] + 1.0;
                constant[k] = true;
            }
        }
        Ok(Self { min, max, constant })
    }

    pub fn series_count(&self) -> usize {
        self.min.len()
    }

    pub fn apply_value(&self, d: usize, x: f64) -> f64 {
        (x - self.min[d]) / (self.max[d] - self.min[d])
    }

    pub fn invert_value(&self, d: usize, x: f64) -> f64 {
        x * (self.max[d] - self.min[d]) + self.min[d]
    }

    /// Scale of series `d` in original units per normalized unit.
    pub fn range(&self, d: usize) -> f64 {
        self.max[d] - self.min[d]
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(d, &x)| self.apply_value(d, x)).collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(d, &x)| self.invert_value(d, x)).collect()
    }

    /// Normalizes a frame; values falling outside `[0, 1]` are allowed but
    /// reported once.
    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        let out = frame.map_rows(|r| self.apply_row(r));
        let outside = out.rows().iter().flatten().filter(|&&v| !(0.0..=1.0).contains(&v)).count();
        if outside > 0 {
            log::warn!("{outside} normalized values fall outside [0, 1]");
        }
        Ok(out)
    }

    pub fn invert(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        Ok(frame.map_rows(|r| self.invert_row(r)))
    }

    fn check(&self, frame: &TimeSeriesFrame) -> Result<()> {
        if frame.series_count() != self.series_count() {
            return Err(Error::contract(format!(
                "scaler fitted on {} series, frame has {}",
                self.series_count(),
                frame.series_count()
            )));
        }
        Ok(())
    }
}
