//! Dataset evaluation: load questions, run the pipeline, aggregate, sweep.

pub mod dataset;
pub mod report;
pub mod runner;
pub mod sweep;

use thiserror::Error;

pub use dataset::{load_dataset, parse_dataset, Dataset, DatasetRow, DeclaredType, QaItem};
pub use report::{divergence_pct, selection_accuracy_on_divergent, Aggregates, RunReport, Timing, SCHEMA_VERSION};
pub use runner::{run_dataset, run_question, Clients, QuestionRecord, QuestionStatus};
pub use sweep::{sweep, SweepAxis, SweepTable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("nothing to aggregate: {0}")]
    Empty(String),
}
