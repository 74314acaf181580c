//! Case files, metrics, fixtures and the experiment runner.

pub mod cases;
pub mod experiment;
pub mod fixtures;
pub mod lint;
pub mod metrics;
pub mod report;

pub use cases::{load_cases, parse_cases, save_cases};
pub use experiment::{
    default_matrix, run_experiment, run_matrix, ExperimentConfig, ExperimentSummary, MemoryVariant,
    RunConfig, RunSection, Runtime, Scenario,
};
pub use lint::{is_repetitive, repetition_lint, REPETITION_THRESHOLD};
pub use metrics::{aggregate, compute_accuracy, MetricsReport};
pub use report::emit_report;
