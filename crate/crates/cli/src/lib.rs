//! Experiment runner: config files, per-seed runs, grids and reports.

pub mod config;
pub mod experiment;
pub mod grid;
pub mod report;

pub use config::{DatasetRef, ExperimentConfig, ModelKind, Precision};
pub use experiment::{load_dataset, run_experiment, ExperimentRecord, RunOptions, RunRecord, StageError};
pub use grid::{run_grid, CellStatus, GridConfig, GridOptions, GridReport};
