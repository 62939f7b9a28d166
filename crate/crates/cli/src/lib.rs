//! Experiment runner for conditional past-future correlations: JSON
//! configs in, CSV / JSON grids and SVG heatmaps out, plus built-in
//! validation suites.

pub mod config;
pub mod error;
pub mod grid;
pub mod pool;
pub mod random;
pub mod render;
pub mod runner;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use grid::CpfGrid;
