use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesFrame;
use crate::error::{Error, Result};

use super::ols::{lagged_design, ols};

/// `x_t = c + Σ_{k=1..p} A_k x_{t−k} + e_t`, fitted equation by equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub p: usize,
    /// `coefficients[k − 1][i][j]`: effect of series `j` at lag `k` on series `i`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub intercept: Vec<f64>,
    /// Residual variance per equation (`RSS / (n − k)`).
    pub residual_variance: Vec<f64>,
    /// Standard errors laid out like `coefficients`.
    pub standard_errors: Vec<Vec<Vec<f64>>>,
}

pub fn var_fit(frame: &TimeSeriesFrame, p: usize) -> Result<VarModel> {
    let d = frame.series_count();
    if p == 0 {
        return Err(Error::contract("VAR lag order must be at least 1"));
    }
    if frame.len() <= d * p + 1 + p {
        return Err(Error::Fit(format!(
            "{} rows are too few for a VAR({p}) on {d} series; use a smaller lag order",
            frame.len()
        )));
    }
    let cols: Vec<usize> = (0..d).collect();
    let x = lagged_design(frame.rows(), &cols, p);
    let y = DMatrix::from_fn(frame.len() - p, d, |r, c| frame.row(r + p)[c]);
    let fit = ols(&x, &y)?;
    let (n, k) = x.shape();
    let dof = (n - k).max(1) as f64;
    let residual_variance: Vec<f64> = fit.rss.iter().map(|r| r / dof).collect();
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::Fit("normal matrix is singular; use a smaller lag order".into()))?;

    let block = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<Vec<f64>>> {
        (0..p)
            .map(|lag| {
                (0..d)
                    .map(|i| (0..d).map(|j| f(i, 1 + lag * d + j)).collect())
                    .collect()
            })
            .collect()
    };
    Ok(VarModel {
        p,
        coefficients: block(&|i, row| fit.coefficients[(row, i)]),
        intercept: (0..d).map(|i| fit.coefficients[(0, i)]).collect(),
        standard_errors: block(&|i, row| (residual_variance[i] * xtx_inv[(row, row)]).sqrt()),
        residual_variance,
    })
}

/// One-step forecast from the last `p` rows of `history` (oldest first).
pub fn var_forecast(model: &VarModel, history: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = model.intercept.len();
    if history.len() < model.p {
        return Err(Error::contract(format!(
            "VAR({}) forecast needs {} rows of history, got {}",
            model.p,
            model.p,
            history.len()
        )));
    }
    if history.iter().any(|r| r.len() != d) {
        return Err(Error::contract(format!("history rows must have {d} values")));
    }
    let last = history.len() - 1;
    Ok((0..d)
        .map(|i| {
            let mut y = model.intercept[i];
            for (k, a) in model.coefficients.iter().enumerate() {
                let x = &history[last - k];
                y += a[i].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
            }
            y
        })
        .collect())
}
