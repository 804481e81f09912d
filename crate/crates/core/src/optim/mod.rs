//! Stochastic-gradient training: the full-gradient baseline, simple alternate
//! training (one shared and one task-specific step per iteration), alternate
//! training through the epochs, and its practical per-epoch-split variant.

mod callbacks;
mod schedule;
mod steps;
mod train;

pub use callbacks::{EarlyStopConfig, EarlyStopping, PlateauConfig, ReduceOnPlateau};
pub use schedule::{validate_schedule, Condition, Schedule, SchedulePair, ScheduleReport, Verdict};
pub use steps::{
    apply_update, ate_sg_cycle, sat_sg_step, scoped_step, sg_step, CycleConfig, CycleTrace, SatStep, StepReport,
};
pub use train::{
    train, train_implemented_ate, train_sg, EpochRecord, Method, Phase, RunHistory, StopReason, TrainConfig,
    TrainOutcome,
};
