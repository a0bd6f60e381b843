use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Primary,
    Secondary,
}

/// `target` depends on `source` with attention weight `weight`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
    pub tier: Tier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub timestamp: String,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    /// Full `β` rows (`[target][source]`), kept even when thresholded away.
    pub beta_matrix: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub primary: f64,
    pub secondary: f64,
}

impl Thresholds {
    /// `1.5/D` and `0.75/D`: well above and somewhat below uniform attention.
    pub fn relative(d: usize) -> Self {
        Self {
            primary: 1.5 / d as f64,
            secondary: 0.75 / d as f64,
        }
    }
}

/// Edges `d → i` for `β[i][d] ≥ secondary`, tiered primary at `≥ primary`.
pub fn build_graph(
    betas: &[Vec<f64>],
    names: &[String],
    thresholds: Thresholds,
    timestamp: impl Into<String>,
) -> Result<DependencyGraph> {
    let d = names.len();
    if betas.len() != d || betas.iter().any(|r| r.len() != d) {
        return Err(Error::contract(format!("β must be {d}×{d} to match the series names")));
    }
    for (i, row) in betas.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::contract(format!("β row {i} is not stochastic (sum {s})")));
        }
    }
    let mut edges = Vec::new();
    for (i, row) in betas.iter().enumerate() {
        for (src, &w) in row.iter().enumerate() {
            if w >= thresholds.secondary {
                edges.push(Edge {
                    source: names[src].clone(),
                    target: names[i].clone(),
                    weight: w,
                    tier: if w >= thresholds.primary { Tier::Primary } else { Tier::Secondary },
                });
            }
        }
    }
    Ok(DependencyGraph {
        timestamp: timestamp.into(),
        nodes: names.to_vec(),
        edges,
        beta_matrix: betas.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl GraphFormat {
    pub fn extension(self) -> &'static str {
        match self {
            GraphFormat::Json => "json",
            GraphFormat::Dot => "dot",
        }
    }
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(GraphFormat::Json),
            "dot" => Ok(GraphFormat::Dot),
            other => Err(Error::contract(format!("unknown graph format {other:?} (json, dot)"))),
        }
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_graph(graph: &DependencyGraph, format: GraphFormat) -> Result<String> {
    match format {
        GraphFormat::Json => Ok(serde_json::to_string_pretty(graph)? + "\n"),
        GraphFormat::Dot => {
            let mut out = String::new();
            let _ = writeln!(out, "digraph dependencies {{");
            let _ = writeln!(out, "  label={};", quote(&graph.timestamp));
            for n in &graph.nodes {
                let _ = writeln!(out, "  {};", quote(n));
            }
            for e in &graph.edges {
                let style = match e.tier {
                    Tier::Primary => "solid",
                    Tier::Secondary => "dashed",
                };
                let _ = writeln!(
                    out,
                    "  {} -> {} [weight={:.6}, penwidth={:.3}, style={style}, label=\"{:.3}\"];",
                    quote(&e.source),
                    quote(&e.target),
                    e.weight,
                    1.0 + 4.0 * e.weight,
                    e.weight
                );
            }
            out.push_str("}\n");
            Ok(out)
        }
    }
}

pub fn graph_from_json(text: &str) -> Result<DependencyGraph> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn diagonal_example() {
        let g = build_graph(
            &[vec![0.9, 0.1], vec![0.2, 0.8]],
            &ab(),
            Thresholds { primary: 0.5, secondary: 0.25 },
            "t0",
        )
        .unwrap();
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.source.as_str(), e.target.as_str(), e.tier)).collect();
        assert_eq!(pairs, vec![("A", "A", Tier::Primary), ("B", "B", Tier::Primary)]);
        assert_eq!(g.edges[0].weight, 0.9);
    }

    #[test]
    fn uniform_four_gives_sixteen_secondary() {
        let names: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let g = build_graph(&vec![vec![0.25; 4]; 4], &names, Thresholds { primary: 0.5, secondary: 0.25 }, "t").unwrap();
        assert_eq!(g.edges.len(), 16);
        assert!(g.edges.iter().all(|e| e.tier == Tier::Secondary));
        assert_eq!(Thresholds::relative(4), Thresholds { primary: 0.375, secondary: 0.1875 });
    }

    #[test]
    fn non_stochastic_rows_are_rejected() {
        assert!(build_graph(&[vec![0.9, 0.2], vec![0.5, 0.5]], &ab(), Thresholds::relative(2), "t").is_err());
    }

    #[test]
    fn exports_are_deterministic_and_round_trip() {
        let g = build_graph(&[vec![0.8, 0.2], vec![0.6, 0.4]], &ab(), Thresholds::relative(2), "12").unwrap();
        let j = export_graph(&g, GraphFormat::Json).unwrap();
        assert_eq!(j, export_graph(&g, GraphFormat::Json).unwrap());
        assert_eq!(graph_from_json(&j).unwrap(), g);
        let d = export_graph(&g, GraphFormat::Dot).unwrap();
        assert!(d.starts_with("digraph") && d.contains("\"A\" -> \"B\""));
        assert!(d.contains("style=solid"));
    }

    #[test]
    fn empty_edge_set_and_unknown_format() {
        let g = DependencyGraph {
            timestamp: "t".into(),
            nodes: ab(),
            edges: vec![],
            beta_matrix: vec![vec![0.5, 0.5]; 2],
        };
        let d = export_graph(&g, GraphFormat::Dot).unwrap();
        assert!(d.contains("\"A\";") && !d.contains("->"));
        assert!("svg".parse::<GraphFormat>().is_err());
    }
}
