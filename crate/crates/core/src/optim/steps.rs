//! Single stochastic-gradient updates: the full-gradient step, the
//! per-iteration alternating step, and one epoch-alternating cycle.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::sample_batch;
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::loss::{LabeledBatch, LossValue};
use crate::model::{ParamVector, Scope};
use crate::objective::Objective;
use crate::optim::SchedulePair;
use crate::verify::WorkCounter;

/// Loss at the iterate before the update and the backward cost spent.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub loss: LossValue,
    pub work: WorkCounter,
}

/// `w_scope ← w_scope − η g`; the rest of `params` is untouched.
pub fn apply_update(params: &mut ParamVector, scope: Scope, gradient: &[f64], eta: f64) -> Result<()> {
    let block = params.scoped_mut(scope);
    if block.len() != gradient.len() {
        return Err(Error::dims("apply_update", block.len(), gradient.len()));
    }
    for (w, g) in block.iter_mut().zip(gradient) {
        *w -= eta * g;
    }
    Ok(())
}

/// One gradient step on the block selected by `scope`.
pub fn scoped_step(
    objective: &Objective,
    params: &mut ParamVector,
    batch: &LabeledBatch,
    scope: Scope,
    eta: f64,
) -> Result<StepReport> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
    }
    let eval = objective.gradient(params, batch, scope)?;
    if !eval.loss.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {} before {} step", eval.loss.total, scope.name())));
    }
    if let Some(j) = eval.gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{} gradient entry {j} is {}",
            scope.name(),
            eval.gradient[j]
        )));
    }
    apply_update(params, scope, &eval.gradient, eta)?;
    Ok(StepReport {
        loss: eval.loss,
        work: eval.work,
    })
}

/// Plain stochastic gradient: `w ← w − η ∇_w ℓ(B; w)`.
pub fn sg_step(objective: &Objective, params: &mut ParamVector, batch: &LabeledBatch, eta: f64) -> Result<StepReport> {
    scoped_step(objective, params, batch, Scope::Full, eta)
}

#[derive(Clone, Debug)]
pub struct SatStep {
    /// Update of `w0` on the first batch, evaluated at `w^(i)`.
    pub shared: StepReport,
    /// The intermediate iterate `z^(i)`.
    pub intermediate: ParamVector,
    /// Update of `w_ts` on the second batch, evaluated at `z^(i)`.
    pub task_specific: StepReport,
}

/// One iteration of simple alternate training: a shared step on a fresh batch,
/// then a task-specific step on another independently drawn batch.
pub fn sat_sg_step(
    objective: &Objective,
    params: &mut ParamVector,
    store: &LabeledBatch,
    batch_size: usize,
    eta_shared: f64,
    eta_task: f64,
    rng: &mut Rng,
) -> Result<SatStep> {
    let first = sample_batch(store, batch_size, rng)?;
    let shared = scoped_step(objective, params, &first, Scope::SharedOnly, eta_shared)?;
    let intermediate = params.clone();
    let second = sample_batch(store, batch_size, rng)?;
    let task_specific = scoped_step(objective, params, &second, Scope::TaskSpecificOnly, eta_task)?;
    Ok(SatStep {
        shared,
        intermediate,
        task_specific,
    })
}

/// Shape of an epoch-alternating cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// `E0`
    pub shared_epochs: usize,
    /// `Ets`
    pub task_epochs: usize,
    /// `t`
    pub batches_per_epoch: usize,
    /// `B`
    pub batch_size: usize,
    /// `E`
    pub epoch_budget: usize,
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("E0", self.shared_epochs),
            ("Ets", self.task_epochs),
            ("t", self.batches_per_epoch),
            ("B", self.batch_size),
            ("E", self.epoch_budget),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("cycle parameter {name} must be at least 1")));
        }
        Ok(())
    }

    /// Iterations in one cycle: `(E0 + Ets)·t`.
    pub fn cycle_len(&self) -> u64 {
        ((self.shared_epochs + self.task_epochs) * self.batches_per_epoch) as u64
    }

    /// Index blocks of cycle `e` in the shared (`I0`) and task-specific (`Its`) sets.
    pub fn index_blocks(&self, e: u64) -> (Range<u64>, Range<u64>) {
        let start = e * self.cycle_len();
        let switch = start + (self.shared_epochs * self.batches_per_epoch) as u64;
        (start..switch, switch..start + self.cycle_len())
    }
}

/// Iteration bookkeeping of one completed cycle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleTrace {
    /// `i_ts` at entry.
    pub start: u64,
    /// `i0`, where the task-specific phase began.
    pub switch: u64,
    /// `i_ts` at exit.
    pub end: u64,
    pub shared_iterations: Range<u64>,
    pub task_iterations: Range<u64>,
    pub work: WorkCounter,
}

/// One cycle of alternate training through the epochs: `E0` epochs of `t`
/// shared-only steps, then `Ets` epochs of `t` task-specific-only steps, each
/// step on a freshly sampled batch. `start` is the iteration counter `i_ts`.
pub fn ate_sg_cycle(
    objective: &Objective,
    params: &mut ParamVector,
    store: &LabeledBatch,
    cfg: &CycleConfig,
    rates: &SchedulePair,
    start: u64,
    rng: &mut Rng,
) -> Result<CycleTrace> {
    cfg.validate()?;
    let mut i = start;
    let mut work = WorkCounter::default();
    for _ in 0..cfg.shared_epochs {
        for _ in 0..cfg.batches_per_epoch {
            let batch = sample_batch(store, cfg.batch_size, rng)?;
            work += scoped_step(objective, params, &batch, Scope::SharedOnly, rates.shared.rate(i))?.work;
            i += 1;
        }
    }
    let switch = i;
    for _ in 0..cfg.task_epochs {
        for _ in 0..cfg.batches_per_epoch {
            let batch = sample_batch(store, cfg.batch_size, rng)?;
            work += scoped_step(objective, params, &batch, Scope::TaskSpecificOnly, rates.task_specific.rate(i))?.work;
            i += 1;
        }
    }
    Ok(CycleTrace {
        start,
        switch,
        end: i,
        shared_iterations: start..switch,
        task_iterations: switch..i,
        work,
    })
}
