//! Experiment runner, tree metrics and output files.

pub mod experiment;
pub mod metrics;
pub mod outputs;

pub use experiment::{
    run_cell, run_experiment, Cell, CellReport, EngineSettings, ExperimentReport, ExperimentSpec,
    LoadedProblem, RolloutSetting, RootQRecord, Timing, TraceLevel,
};
pub use metrics::{depth_histogram, expansions_per_node, median_depth, TreeMetrics};
