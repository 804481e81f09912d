//! Hard-parameter-sharing multi-task networks trained by plain stochastic
//! gradient or by alternating shared and task-specific updates.

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
pub use loss::{LabeledBatch, LossConfig, LossKind, LossValue};
pub use model::{Activation, MtnnArchitecture, ParamVector, Scope};
pub use objective::Objective;
pub use verify::WorkCounter;
