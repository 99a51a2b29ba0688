//! Dataset loading, scoring, suite runs and parameter sweeps.

mod dataset;
mod scoring;
mod suite;
mod sweep;

pub use dataset::{load_dataset, parse_dataset, DatasetError};
pub use scoring::{score, score_with, ScoringMode};
pub use suite::{
    aggregate, run_baseline, run_suite, run_task, write_records_csv, AggregateReport, BaselineConfig, Clients, Protocol, RunRecord,
    SuiteConfig,
};
pub use sweep::{sweep, sweep_csv, write_sweep_csv, SweepAxis, SweepError, SweepRow};
