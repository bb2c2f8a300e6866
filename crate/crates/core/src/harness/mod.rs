//! Experiment runner: configuration, references, the closed loop, the
//! variant sweep and a few self-checking numerical oracles.

pub mod compare;
pub mod config;
pub mod oracle;
pub mod reference;
pub mod sim;

pub use compare::{run_comparison, CellResult, ComparisonTable};
pub use config::{DictConfig, ExperimentConfig, RunConfig, TrainingSpec, Variant};
pub use reference::{ReferenceKind, ReferenceSpec};
pub use sim::{
    compute_metric, generate_training_data, initial_estimator, reference_energy, run_closed_loop,
    run_closed_loop_with, write_trace_csv, LoopView, RunAbort, StepRecord,
};
