//! Command-line pipeline: generate or ingest data, partition, train,
//! evaluate, rank, report, account costs and sweep federation sizes.

pub mod args;
pub mod commands;
pub mod config;

use credgraph::CoreError;
use ndgrad::NdError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Process exit status for an error.
pub fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Config(_) => EXIT_CONFIG,
        CoreError::Numeric(NdError::Io(_) | NdError::Json(_) | NdError::Checkpoint(_)) => EXIT_DATA,
        CoreError::Data(_)
        | CoreError::Parse { .. }
        | CoreError::UnknownNode(_)
        | CoreError::Io(_)
        | CoreError::Json(_) => EXIT_DATA,
        CoreError::Numeric(_) | CoreError::Runtime(_) => EXIT_RUNTIME,
    }
}
