use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::TimeSeriesFrame;
use crate::error::{Error, Result};

use super::ols::{lagged_design, ols};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub f_statistic: f64,
    pub p_value: f64,
    pub lag_order: usize,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
    pub df_numerator: usize,
    pub df_denominator: usize,
}

/// F-test of whether `p` lags of `candidate` improve an order-`p`
/// autoregression of `target`.
pub fn granger_test(frame: &TimeSeriesFrame, target: usize, candidate: usize, p: usize) -> Result<GrangerResult> {
    let d = frame.series_count();
    if target >= d || candidate >= d {
        return Err(Error::contract(format!("series index out of range for {d} series")));
    }
    if target == candidate {
        return Err(Error::contract("candidate and target must be different series"));
    }
    if p == 0 {
        return Err(Error::contract("lag order must be at least 1"));
    }
    let n = frame.len().saturating_sub(p);
    if n <= 2 * p + 1 {
        return Err(Error::Fit(format!(
            "{} rows are too few for a lag-{p} Granger test; use a smaller lag order",
            frame.len()
        )));
    }
    let rows = frame.rows();
    let y = DMatrix::from_fn(n, 1, |r, _| rows[r + p][target]);
    let restricted = ols(&lagged_design(rows, &[target], p), &y)?;
    let unrestricted = ols(&lagged_design(rows, &[target, candidate], p), &y)?;
    let (rss_r, rss_u) = (restricted.rss[0], unrestricted.rss[0]);
    let df_den = n - 2 * p - 1;
    let f = if rss_u > 0.0 {
        (((rss_r - rss_u) / p as f64) / (rss_u / df_den as f64)).max(0.0)
    } else {
        f64::INFINITY
    };
    let dist = FisherSnedecor::new(p as f64, df_den as f64).map_err(|e| Error::Fit(e.to_string()))?;
    let p_value = if f.is_finite() { dist.sf(f).clamp(0.0, 1.0) } else { 0.0 };
    Ok(GrangerResult {
        f_statistic: f,
        p_value,
        lag_order: p,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
        df_numerator: p,
        df_denominator: df_den,
    })
}
