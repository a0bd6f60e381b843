use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::TimeSeriesFrame;

/// `m` consecutive rows and the row that follows them.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample<T> {
    /// `[m, D]`
    pub inputs: Tensor<T>,
    /// Row `target_row` of the source frame.
    pub target: Vec<T>,
    pub target_row: usize,
}

/// All `T − m` windows: sample `k` covers rows `k..k+m` and targets row `k+m`.
pub fn make_windows<T: Scalar>(frame: &TimeSeriesFrame, m: usize) -> Result<Vec<WindowSample<T>>> {
    if m == 0 {
        return Err(Error::contract("window length must be at least 1"));
    }
    if frame.len() < m + 1 {
        return Err(Error::contract(format!(
            "{} rows cannot form a window of length {m} plus a target",
            frame.len()
        )));
    }
    let d = frame.series_count();
    let rows = frame.rows();
    Ok((0..frame.len() - m)
        .map(|k| {
            let data = rows[k..k + m].iter().flatten().map(|&v| T::lit(v)).collect();
            WindowSample {
                inputs: Tensor::matrix(m, d, data).expect("window shape"),
                target: rows[k + m].iter().map(|&v| T::lit(v)).collect(),
                target_row: k + m,
            }
        })
        .collect())
}

/// Chronological train/dev/test row ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub dev: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    /// First `train` share of rows, then `dev`, remainder test.
    pub fn chronological(len: usize, train: f64, dev: f64) -> Result<Self> {
        if !(train > 0.0 && dev >= 0.0 && train + dev < 1.0) {
            return Err(Error::Config(format!(
                "split fractions train {train}, dev {dev} must be positive and leave a test share"
            )));
        }
        let a = (len as f64 * train).floor() as usize;
        let b = a + (len as f64 * dev).floor() as usize;
        Ok(Self {
            train: 0..a,
            dev: a..b,
            test: b..len,
        })
    }

    /// The 70:15:15 split.
    pub fn standard(len: usize) -> Self {
        Self::chronological(len, 0.70, 0.15).expect("valid fractions")
    }
}

/// Partitions windows by the split that contains their target row.
#[allow(clippy::type_complexity)]
pub fn split_windows<T: Clone>(
    windows: &[WindowSample<T>],
    ranges: &SplitRanges,
) -> (Vec<WindowSample<T>>, Vec<WindowSample<T>>, Vec<WindowSample<T>>) {
    let pick = |r: &Range<usize>| {
        windows
            .iter()
            .filter(|w| r.contains(&w.target_row))
            .cloned()
            .collect::<Vec<_>>()
    };
    (pick(&ranges.train), pick(&ranges.dev), pick(&ranges.test))
}
