//! Dense `f64` numerics with tape-based reverse-mode differentiation.
//!
//! The crate provides exactly what a small attention GNN needs: row-major
//! matrices, a recording [`Tape`] with fused graph ops (gather, scatter,
//! segment softmax, batch norm, BCE), the [`Adam`] optimizer, the
//! [`OneCycleSchedule`], and a binary checkpoint format for [`ParamSet`].

pub mod error;
pub mod func;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use error::{NdError, Result};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use optim::{sgd_step, Adam, AdamState};
pub use params::{ParamEntry, ParamSet};
pub use schedule::OneCycleSchedule;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
