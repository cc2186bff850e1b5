//! File formats, experiment orchestration and plotting around the numeric
//! core: PNG image IO with 8-bit quantization, JSON prompt sets and configs,
//! the binary checkpoint container, Table-style evaluation reports, and
//! deterministic bar-chart emission.

pub mod checkpoint;
pub mod configs;
pub mod harness;
pub mod plots;
pub mod pngio;
pub mod promptio;

pub use configs::{ExperimentSpec, Method};
pub use harness::{compare_reports, run_experiment, ComparisonTable, EvalReport, EvalRow};
