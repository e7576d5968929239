pub mod error;
pub mod features;
pub mod fl;
pub mod gnn;
pub mod graph;
mod init;

pub use error::{CoreError, Result};
pub mod model;
pub mod predict;
