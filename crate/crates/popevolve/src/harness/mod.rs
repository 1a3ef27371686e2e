//! Dataset ingestion, run execution with a persistent event log, resume,
//! and report emission.

mod dataset;
mod report;
mod run;
mod runlog;
mod session;

pub use dataset::{ingest_dataset, ingest_datasets, Dataset};
pub use report::{emit_report, ReportFiles, ReportOptions};
pub use run::{execute_run, load_run, resume_run, RunOptions, RunSummary};
pub use runlog::{strip_timestamps, RunDir};
pub use session::SessionTransport;

use crate::backend::BackendError;
use crate::domain::ConfigViolation;
use crate::metrics::MetricsError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Refused(String),
    #[error("corrupt run log: {0}")]
    Corrupt(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("report writing error: {0}")]
    Csv(#[from] csv::Error),
}

fn format_violations(violations: &[ConfigViolation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
