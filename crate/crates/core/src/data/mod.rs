//! Series containers, CSV I/O, normalization, windowing and the synthetic
//! bivariate generator.

mod frame;
mod io;
mod scaler;
pub mod synthetic;
mod window;

pub use frame::TimeSeriesFrame;
pub use io::{load_csv, read_csv, write_csv};
pub use scaler::Scaler;
pub use synthetic::{generate_bivariate, RuleLabel, SyntheticConfig, SyntheticSeries};
pub use window::{make_windows, split_windows, SplitRanges, WindowSample};
