//! Minimal columnar dataframe engine: operator semantics, partitioned and
//! preemptible execution, and partial-result fast paths.

mod exact;
pub mod fastpath;
mod ops;
pub mod partition;
pub mod source;
pub mod table;

use thiserror::Error;

pub use exact::ExactSum;
pub use fastpath::{plan_fast_path, run_fast_path, static_shape, FastPathPlan, FastPathResult, Shape};
pub use ops::eval_operator;
pub use partition::{
    execute_partitioned, execute_partitioned_observed, make_partition_plan, partition_class, partition_rows,
    plan_with_quantiles, resume, Checkpoint, PartitionClass, PartitionOutcome, PartitionPlan, PartitionRun,
};
pub use source::{read_csv_file, read_csv_from, Catalog, SyntheticSpec};
pub use table::{ColumnVector, DataTable, Scalar, Series, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("{op}: expected {expected}, found {found}")]
    TypeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("no column named '{0}'")]
    MissingColumn(String),
    #[error("{0} has no non-null values")]
    EmptyAggregate(String),
    #[error("duplicate column '{0}'")]
    DuplicateColumn(String),
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
    #[error("cannot load '{path}': {message}")]
    DataLoad { path: String, message: String },
    #[error("rows {start}..{end}: {source}")]
    InRange {
        start: usize,
        end: usize,
        source: Box<EngineError>,
    },
    #[error("internal engine error: {0}")]
    Internal(String),
}

impl EngineError {
    /// The error without range tagging.
    pub fn root(&self) -> &EngineError {
        match self {
            EngineError::InRange { source, .. } => source.root(),
            e => e,
        }
    }
}
