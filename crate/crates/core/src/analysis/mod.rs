//! Dependency artifacts from attention traces, and linear baselines.

mod granger;
mod graph;
mod lags;
mod ols;
mod var;

pub use granger::{granger_test, GrangerResult};
pub use graph::{build_graph, export_graph, graph_from_json, DependencyGraph, Edge, GraphFormat, Thresholds, Tier};
pub use lags::{aggregate_lags, LagProfile};
pub use ols::{ols, OlsFit};
pub use var::{var_fit, var_forecast, VarModel};
