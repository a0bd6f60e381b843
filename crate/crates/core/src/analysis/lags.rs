use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column means of an `m × m` α matrix, renormalized, reindexed so that
/// index 0 is the latest input point.
pub fn aggregate_lags(alphas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = alphas.first().map_or(0, Vec::len);
    if m == 0 || alphas.iter().any(|r| r.len() != m) {
        return Err(Error::contract("α must be a non-empty rectangular matrix"));
    }
    let mut by_key = vec![0.0; m];
    for row in alphas {
        for (j, &a) in row.iter().enumerate() {
            by_key[j] += a;
        }
    }
    let total: f64 = by_key.iter().sum();
    if !(total > 0.0) {
        return Err(Error::contract("α has no positive mass"));
    }
    Ok(by_key.iter().rev().map(|v| v / total).collect())
}

/// Per-series weights over lags, latest lag at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagProfile {
    pub series: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl LagProfile {
    /// Profile of one trace's `alphas[d][t][j]`.
    pub fn from_alphas(series: &[String], alphas: &[Vec<Vec<f64>>]) -> Result<Self> {
        if alphas.len() != series.len() {
            return Err(Error::contract(format!(
                "{} α blocks for {} series",
                alphas.len(),
                series.len()
            )));
        }
        Ok(Self {
            series: series.to_vec(),
            weights: alphas.iter().map(|a| aggregate_lags(a)).collect::<Result<_>>()?,
        })
    }

    /// Mean of several profiles over the same series, renormalized.
    pub fn average(profiles: &[LagProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::contract("cannot average zero lag profiles"))?;
        let mut weights = vec![vec![0.0; first.weights[0].len()]; first.series.len()];
        for p in profiles {
            if p.series != first.series || p.weights.iter().zip(&weights).any(|(a, b)| a.len() != b.len()) {
                return Err(Error::contract("lag profiles differ in series or length"));
            }
            for (acc, w) in weights.iter_mut().zip(&p.weights) {
                acc.iter_mut().zip(w).for_each(|(a, v)| *a += v);
            }
        }
        for w in &mut weights {
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
        }
        Ok(Self {
            series: first.series.clone(),
            weights,
        })
    }

    /// Lags of series `d` ordered by decreasing weight (ties: smaller lag first).
    pub fn ranked_lags(&self, d: usize) -> Vec<usize> {
        let w = &self.weights[d];
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        idx
    }

    pub fn peak_lag(&self, d: usize) -> usize {
        self.ranked_lags(d)[0]
    }

    /// CSV with header `series,lag_0,…,lag_{m−1}`.
    pub fn to_csv(&self) -> String {
        let m = self.weights.first().map_or(0, Vec::len);
        let mut out = String::from("series");
        for l in 0..m {
            let _ = write!(out, ",lag_{l}");
        }
        out.push('\n');
        for (name, w) in self.series.iter().zip(&self.weights) {
            out.push_str(name);
            for v in w {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
