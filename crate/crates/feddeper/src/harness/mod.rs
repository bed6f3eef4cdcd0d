//! Experiment orchestration: configuration, run execution with JSONL
//! metrics, hyper-parameter sweeps, and plot-data extraction.

mod config;
mod plotdata;
mod runner;
mod sweep;

pub use config::{
    DatasetConfig, ExperimentConfig, ModelConfig, PartitionConfig, RawHyperParams,
};
pub use plotdata::emit_plot_data;
pub use runner::{run_experiment, ExperimentArtifacts, RunSummary, SummaryRecord};
pub use sweep::{sweep, SweepAxis, SweepOutcome};
