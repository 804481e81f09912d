//! Verification machinery: a central-difference gradient oracle, a replay of
//! the epoch-alternating cycle built from plain scoped updates, and the
//! gradient work/storage accountant.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::data::sample_batch;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::loss::LabeledBatch;
use crate::model::{backward, forward, MtnnArchitecture, ParamVector, Scope};
use crate::objective::Objective;
use crate::optim::{CycleConfig, SchedulePair};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Backward-pass cost: multiply-accumulates spent on parameter and input
/// gradients, and the number of gradient entries held in memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCounter {
    pub multiply_accumulate_count: u64,
    pub materialized_gradient_entries: u64,
}

impl AddAssign for WorkCounter {
    /// Work adds up; storage is a peak.
    fn add_assign(&mut self, rhs: Self) {
        self.multiply_accumulate_count += rhs.multiply_accumulate_count;
        self.materialized_gradient_entries = self
            .materialized_gradient_entries
            .max(rhs.materialized_gradient_entries);
    }
}

/// Central differences of `loss` over the coordinates of `scope`.
pub fn fd_gradient<F>(mut loss: F, params: &ParamVector, scope: Scope, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let range = params.scope_range(scope);
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(range.len());
    for j in range {
        let w = params.as_slice()[j];
        probe.as_mut_slice()[j] = w + h;
        let up = loss(&probe)?;
        probe.as_mut_slice()[j] = w - h;
        let down = loss(&probe)?;
        probe.as_mut_slice()[j] = w;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluation around coordinate {j}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `max |a − b| / max(1, ‖b‖∞)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Directional derivative of `loss` at `params` along `direction` by central differences.
pub fn fd_directional<F>(mut loss: F, params: &ParamVector, direction: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let mut up = params.clone();
    let mut down = params.clone();
    for ((u, d), v) in up.as_mut_slice().iter_mut().zip(down.as_mut_slice()).zip(direction) {
        *u += h * v;
        *d -= h * v;
    }
    Ok((loss(&up)? - loss(&down)?) / (2.0 * h))
}

/// Parameter counts and per-scope backward cost of an architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostAudit {
    pub param_count: usize,
    pub shared_param_count: usize,
    pub task_specific_param_count: usize,
    pub full: WorkCounter,
    pub shared_only: WorkCounter,
    pub task_specific_only: WorkCounter,
}

impl CostAudit {
    /// `p0 / p` as an exact fraction.
    pub fn shared_fraction(&self) -> (usize, usize) {
        (self.shared_param_count, self.param_count)
    }

    /// `p_ts / p` as an exact fraction.
    pub fn task_specific_fraction(&self) -> (usize, usize) {
        (self.task_specific_param_count, self.param_count)
    }

    pub fn shared_mac_ratio(&self) -> f64 {
        self.shared_only.multiply_accumulate_count as f64 / self.full.multiply_accumulate_count as f64
    }

    pub fn task_specific_mac_ratio(&self) -> f64 {
        self.task_specific_only.multiply_accumulate_count as f64 / self.full.multiply_accumulate_count as f64
    }

    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let (p, p0, pts) = (self.param_count, self.shared_param_count, self.task_specific_param_count);
        let _ = writeln!(s, "param_count = {p}");
        let _ = writeln!(s, "shared_param_count = {p0}");
        let _ = writeln!(s, "task_specific_param_count = {pts}");
        let _ = writeln!(s, "shared_gradient_fraction = {p0}/{p} = {:.17e}", p0 as f64 / p as f64);
        let _ = writeln!(s, "task_specific_gradient_fraction = {pts}/{p} = {:.17e}", pts as f64 / p as f64);
        for (name, w) in [
            ("full", self.full),
            ("shared_only", self.shared_only),
            ("task_specific_only", self.task_specific_only),
        ] {
            let _ = writeln!(s, "{name}.multiply_accumulate_count = {}", w.multiply_accumulate_count);
            let _ = writeln!(s, "{name}.materialized_gradient_entries = {}", w.materialized_gradient_entries);
        }
        let _ = writeln!(s, "shared_only.mac_ratio = {:.17e}", self.shared_mac_ratio());
        let _ = writeln!(s, "task_specific_only.mac_ratio = {:.17e}", self.task_specific_mac_ratio());
        s
    }
}

/// Runs an instrumented backward pass per scope on a single-row batch.
pub fn audit_costs(arch: &MtnnArchitecture) -> CostAudit {
    let params = ParamVector::zeros(arch);
    let inputs = Matrix::zeros(1, arch.input_width());
    let (_, trace) = forward(arch, &params, &inputs).expect("input width matches");
    let grads: Vec<Matrix> = (0..arch.task_count())
        .map(|k| Matrix::zeros(1, arch.output_width(k)))
        .collect();
    let run = |scope| {
        backward(arch, &params, &trace, &grads, scope)
            .expect("shapes are consistent")
            .work
    };
    CostAudit {
        param_count: arch.param_count(),
        shared_param_count: arch.shared_param_count(),
        task_specific_param_count: arch.task_specific_param_count(),
        full: run(Scope::Full),
        shared_only: run(Scope::SharedOnly),
        task_specific_only: run(Scope::TaskSpecificOnly),
    }
}

/// Multiply-accumulates the trunk part of a backward pass on `batch` rows
/// spends (kernel, bias and hidden-input gradients).
pub fn trunk_backward_macs(arch: &MtnnArchitecture, batch: usize) -> u64 {
    arch.trunk()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let kernel = l.input_width * l.output_width;
            let input_grad = if i == 0 { 0 } else { kernel };
            (batch * (kernel + l.output_width + input_grad)) as u64
        })
        .sum()
}

/// One ATE-SG cycle rebuilt from scratch: explicit loops over plain
/// `w_block ← w_block − η g` updates, drawing batches from `rng` in the same
/// order the optimizer does. Returns the parameters after the cycle.
pub fn replay_ate_cycle(
    objective: &Objective,
    params: &ParamVector,
    store: &LabeledBatch,
    cfg: &CycleConfig,
    rates: &SchedulePair,
    start_iteration: u64,
    rng: &mut Rng,
) -> Result<ParamVector> {
    let mut w = params.clone();
    let mut i = start_iteration;
    let phases = [(Scope::SharedOnly, cfg.shared_epochs), (Scope::TaskSpecificOnly, cfg.task_epochs)];
    for (scope, epochs) in phases {
        for _ in 0..epochs * cfg.batches_per_epoch {
            let batch = sample_batch(store, cfg.batch_size, rng)?;
            let eta = match scope {
                Scope::SharedOnly => rates.shared.rate(i),
                _ => rates.task_specific.rate(i),
            };
            let g = objective.gradient(&w, &batch, scope)?.gradient;
            let range = w.scope_range(scope);
            for (x, gj) in w.as_mut_slice()[range].iter_mut().zip(&g) {
                *x -= eta * gj;
            }
            i += 1;
        }
    }
    Ok(w)
}
