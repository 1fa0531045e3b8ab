//! Experiment harness: configuration, replication loops, metrics, reports
//! and the invariant self-check.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod report;
pub mod validate;

pub use config::{ExperimentConfig, Gamma, Method, RatioMode, RuleSpec, Task};
pub use experiments::{run_classification, run_experiment, run_figure1, run_hierarchical, run_regression, HierarchicalConfig, HierarchicalReport};
pub use metrics::{MetricsReport, MetricsRow, Outcome};
pub use report::{emit_csv, emit_svg, read_csv, CsvRecord};
pub use validate::{run_validate, SuiteResult};
