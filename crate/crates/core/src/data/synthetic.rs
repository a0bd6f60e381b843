//! Bivariate series driven by two switching lag rules.
//!
//! With `A[t] < 0.5` (rule 1) the next row is
//! `A = A[t−4]`, `B = (B[t−3] + B[t−6]) / 2`; otherwise (rule 2)
//! `A = (A[t−6] + B[t−3]) / 2`, `B = A[t−3]`.
//!
//! Without intervention the rules settle onto a fixed point within a few
//! dozen steps. To keep the series volatile, at each step with probability
//! `regen_probability` the lagged values the rule is about to read are
//! redrawn uniformly. The redrawn history is then replayed forward so that
//! every row not itself redrawn still obeys the rule selected by its own
//! predecessor. Rows containing a redrawn value are labelled
//! [`RuleLabel::Drawn`]; all other rows carry the rule that produced them.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

use super::TimeSeriesFrame;

/// Rows before the first rule application (deepest lag 6, plus the current).
pub const WARM_UP: usize = 7;

pub const SERIES_NAMES: [&str; 2] = ["SeriesA", "SeriesB"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_regen")]
    pub regen_probability: f64,
}

fn default_length() -> usize {
    10_000
}

fn default_regen() -> f64 {
    0.2
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            length: default_length(),
            seed: 0,
            regen_probability: default_regen(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length <= 10 {
            return Err(Error::Config(format!(
                "synthetic length must exceed 10, got {}",
                self.length
            )));
        }
        if !(0.0..=1.0).contains(&self.regen_probability) {
            return Err(Error::Config(format!(
                "regen_probability must lie in [0, 1], got {}",
                self.regen_probability
            )));
        }
        Ok(())
    }
}

/// Which mechanism produced a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleLabel {
    /// Warm-up row or a row holding a redrawn value.
    Drawn,
    Rule1,
    Rule2,
}

impl RuleLabel {
    pub fn id(self) -> u8 {
        match self {
            RuleLabel::Drawn => 0,
            RuleLabel::Rule1 => 1,
            RuleLabel::Rule2 => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(RuleLabel::Drawn),
            1 => Some(RuleLabel::Rule1),
            2 => Some(RuleLabel::Rule2),
            _ => None,
        }
    }
}

/// Next row from rows `..=t`: `(A[t+1], B[t+1], rule)`. Needs `t ≥ 6`.
pub fn apply_rules(a: &[f64], b: &[f64], t: usize) -> (f64, f64, RuleLabel) {
    if a[t] < 0.5 {
        (a[t - 4], 0.5 * (b[t - 3] + b[t - 6]), RuleLabel::Rule1)
    } else {
        (0.5 * (a[t - 6] + b[t - 3]), a[t - 3], RuleLabel::Rule2)
    }
}

/// Lagged cells `(series, row)` the rule selected by `a[t]` reads.
fn sources(a: &[f64], t: usize) -> [(usize, usize); 3] {
    if a[t] < 0.5 {
        [(0, t - 4), (1, t - 3), (1, t - 6)]
    } else {
        [(0, t - 6), (1, t - 3), (0, t - 3)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSeries {
    pub frame: TimeSeriesFrame,
    /// One label per row.
    pub labels: Vec<RuleLabel>,
}

impl SyntheticSeries {
    /// Fraction of rows carrying each label, ordered `[Drawn, Rule1, Rule2]`.
    pub fn label_frequencies(&self) -> [f64; 3] {
        let mut n = [0usize; 3];
        for l in &self.labels {
            n[l.id() as usize] += 1;
        }
        let t = self.labels.len() as f64;
        [n[0] as f64 / t, n[1] as f64 / t, n[2] as f64 / t]
    }
}

pub fn generate_bivariate(cfg: &SyntheticConfig) -> Result<SyntheticSeries> {
    cfg.validate()?;
    let n = cfg.length;
    let mut rng = rng_for(cfg.seed, "data");
    let mut vals: [Vec<f64>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut drawn: [Vec<bool>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..WARM_UP {
        for s in 0..2 {
            vals[s].push(rng.gen::<f64>());
            drawn[s].push(true);
        }
    }

    for t in WARM_UP - 1..n - 1 {
        if cfg.regen_probability > 0.0 && rng.gen::<f64>() < cfg.regen_probability {
            let mut earliest = t + 1;
            for (s, i) in sources(&vals[0], t) {
                vals[s][i] = rng.gen::<f64>();
                drawn[s][i] = true;
                earliest = earliest.min(i);
            }
            for j in (earliest + 1).max(WARM_UP)..=t {
                let (na, nb, _) = apply_rules(&vals[0], &vals[1], j - 1);
                if !drawn[0][j] {
                    vals[0][j] = na;
                }
                if !drawn[1][j] {
                    vals[1][j] = nb;
                }
            }
        }
        let (na, nb, _) = apply_rules(&vals[0], &vals[1], t);
        vals[0].push(na);
        vals[1].push(nb);
        drawn[0].push(false);
        drawn[1].push(false);
    }

    let labels = (0..n)
        .map(|j| {
            if drawn[0][j] || drawn[1][j] {
                RuleLabel::Drawn
            } else {
                apply_rules(&vals[0], &vals[1], j - 1).2
            }
        })
        .collect();
    let [a, b] = vals;
    let frame = TimeSeriesFrame::from_columns(SERIES_NAMES.iter().map(|s| s.to_string()).collect(), vec![a, b])?;
    Ok(SyntheticSeries { frame, labels })
}

/// Sidecar CSV with header `row,rule`; rule ids are 0 (drawn), 1, 2.
pub fn write_labels(labels: &[RuleLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(labels.len() * 8);
    out.push_str("row,rule\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", l.id()));
    }
    File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<RuleLabel>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |column, message: &str| Error::Ingestion {
            row: i + 2,
            column,
            message: message.to_string(),
        };
        let row: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(1, "bad row index"))?;
        if row != i {
            return Err(bad(1, "row indices must be consecutive from 0"));
        }
        let id: u8 = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(2, "bad rule id"))?;
        labels.push(RuleLabel::from_id(id).ok_or_else(|| bad(2, "rule id must be 0, 1 or 2"))?);
    }
    Ok(labels)
}
