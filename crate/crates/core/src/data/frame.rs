use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T × D` real values with unique series names and optional timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesFrame {
    names: Vec<String>,
    /// Row-major, one `Vec` of length `D` per time step.
    rows: Vec<Vec<f64>>,
    timestamps: Option<Vec<String>>,
}

impl TimeSeriesFrame {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, timestamps: Option<Vec<String>>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::contract("a frame needs at least one series"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::contract(format!("duplicate series name {dup:?}")));
        }
        if let Some((t, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != names.len()) {
            return Err(Error::contract(format!(
                "row {t} has {} values for {} series",
                r.len(),
                names.len()
            )));
        }
        if let Some(t) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("row {t} contains a non-finite value")));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != rows.len() {
                return Err(Error::contract("one timestamp per row required"));
            }
            if let Some(i) = first_decrease(ts) {
                return Err(Error::contract(format!("timestamps decrease at row {i}")));
            }
        }
        Ok(Self { names, rows, timestamps })
    }

    /// Builds from columns (`D` vectors of equal length `T`).
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let len = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != len) {
            return Err(Error::contract("columns differ in length"));
        }
        let rows = (0..len).map(|t| columns.iter().map(|c| c[t]).collect()).collect();
        Self::new(names, rows, None)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// Label for row `t`: its timestamp, or the row index.
    pub fn timestamp_label(&self, t: usize) -> String {
        match &self.timestamps {
            Some(ts) => ts[t].clone(),
            None => t.to_string(),
        }
    }

    /// `T`
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `D`
    pub fn series_count(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[d]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Columns reordered lexicographically by name.
    pub fn sorted_by_name(mut self) -> Self {
        let mut order: Vec<usize> = (0..self.names.len()).collect();
        order.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return self;
        }
        self.names = order.iter().map(|&i| self.names[i].clone()).collect();
        for r in &mut self.rows {
            *r = order.iter().map(|&i| r[i]).collect();
        }
        self
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::contract(format!(
                "row range {range:?} outside 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            names: self.names.clone(),
            rows: self.rows[range.clone()].to_vec(),
            timestamps: self.timestamps.as_ref().map(|ts| ts[range].to_vec()),
        })
    }

    /// Same shape and names, values replaced row by row.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        Self {
            names: self.names.clone(),
            rows: self.rows.iter().map(|r| f(r)).collect(),
            timestamps: self.timestamps.clone(),
        }
    }
}

fn first_decrease(ts: &[String]) -> Option<usize> {
    let numeric: Option<Vec<f64>> = ts.iter().map(|s| s.trim().parse().ok()).collect();
    match numeric {
        Some(v) => (1..v.len()).find(|&i| v[i] < v[i - 1]),
        None => (1..ts.len()).find(|&i| ts[i] < ts[i - 1]),
    }
}
