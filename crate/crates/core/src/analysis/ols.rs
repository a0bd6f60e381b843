use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Least-squares solution of `X β ≈ Y` for every column of `Y`.
#[derive(Clone, Debug)]
pub struct OlsFit {
    /// `k × q`
    pub coefficients: DMatrix<f64>,
    /// Residual sum of squares per column of `Y`.
    pub rss: Vec<f64>,
}

/// Solves by SVD; a numerically rank-deficient `X` is a fit error.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.nrows() != n {
        return Err(Error::contract(format!("{n} regressor rows, {} response rows", y.nrows())));
    }
    if n < k {
        return Err(Error::Fit(format!(
            "{n} observations cannot identify {k} coefficients; use a smaller lag order"
        )));
    }
    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = s_max * (n.max(k) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < k {
        return Err(Error::Fit(format!(
            "regressor matrix has rank {rank} < {k}; use a smaller lag order"
        )));
    }
    let coefficients = svd.solve(y, tol).map_err(|e| Error::Fit(e.to_string()))?;
    let resid = y - x * &coefficients;
    let rss = resid.column_iter().map(|c| c.norm_squared()).collect();
    Ok(OlsFit { coefficients, rss })
}

/// Rows `p..T` of a lagged design: `[1, z_{t−1}…, z_{t−p}…]` over the chosen
/// columns (each column contributes its `p` lags, column-major by lag).
pub(crate) fn lagged_design(rows: &[Vec<f64>], columns: &[usize], p: usize) -> DMatrix<f64> {
    let n = rows.len() - p;
    let k = 1 + columns.len() * p;
    DMatrix::from_fn(n, k, |r, c| {
        if c == 0 {
            return 1.0;
        }
        let lag = (c - 1) / columns.len() + 1;
        let col = columns[(c - 1) % columns.len()];
        rows[r + p - lag][col]
    })
}
