pub mod analysis;
pub mod autodiff;
pub mod cells;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod params;
pub mod scalar;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Model64 = model::Seq2Graph<f64>;
pub type Model32 = model::Seq2Graph<f32>;
pub type ModelParams64 = model::ModelParams<autodiff::Tensor<f64>>;
