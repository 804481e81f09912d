//! Experiment driver: configuration, seed sweeps and output files.

pub mod config;
pub mod output;
pub mod run;

pub use config::{DataSource, ExperimentConfig, ScheduleKind};
pub use output::{emit_outputs, read_history_csv, HistoryRow};
pub use run::{run_experiment, run_single, summarize, Experiment, Summary};
