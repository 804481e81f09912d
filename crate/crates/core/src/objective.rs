//! A network architecture paired with its loss configuration: the function
//! `ℓ(B; w)` every optimizer and oracle works against.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{aggregate_loss, output_gradient, LabeledBatch, LossConfig, LossValue};
use crate::model::{backward, forward, MtnnArchitecture, ParamVector, Scope};
use crate::verify::WorkCounter;

#[derive(Clone, Debug)]
pub struct Objective {
    arch: MtnnArchitecture,
    loss: LossConfig,
}

#[derive(Clone, Debug)]
pub struct GradientEval {
    pub loss: LossValue,
    pub gradient: Vec<f64>,
    pub work: WorkCounter,
}

impl Objective {
    pub fn new(arch: MtnnArchitecture, loss: LossConfig) -> Result<Self> {
        if arch.task_count() != loss.task_count() {
            return Err(Error::InvalidArgument(format!(
                "architecture has {} branches but the loss configures {} tasks",
                arch.task_count(),
                loss.task_count()
            )));
        }
        Ok(Self { arch, loss })
    }

    pub fn arch(&self) -> &MtnnArchitecture {
        &self.arch
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn predict(&self, params: &ParamVector, inputs: &Matrix) -> Result<Vec<Matrix>> {
        Ok(forward(&self.arch, params, inputs)?.0)
    }

    pub fn evaluate(&self, params: &ParamVector, batch: &LabeledBatch) -> Result<LossValue> {
        let (outputs, _) = forward(&self.arch, params, batch.inputs())?;
        aggregate_loss(&self.loss, &outputs, batch)
    }

    /// Loss at `params` and its gradient block for `scope`.
    pub fn gradient(&self, params: &ParamVector, batch: &LabeledBatch, scope: Scope) -> Result<GradientEval> {
        let (outputs, trace) = forward(&self.arch, params, batch.inputs())?;
        let loss = aggregate_loss(&self.loss, &outputs, batch)?;
        let grads = outputs
            .iter()
            .enumerate()
            .map(|(k, out)| {
                output_gradient(
                    self.loss.kind(k),
                    self.arch.head_activation(k),
                    out,
                    batch.labels(k),
                    self.loss.weight(k),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let back = backward(&self.arch, params, &trace, &grads, scope)?;
        Ok(GradientEval {
            loss,
            gradient: back.gradient,
            work: back.work,
        })
    }

    /// Objective restricted to task `k`: same trunk, branch `k` only, weight `λk`.
    pub fn single_task(&self, k: usize) -> Objective {
        Objective {
            arch: self.arch.single_task(k),
            loss: self.loss.single_task(k),
        }
    }
}

/// Parameters of the single-task subnetwork for task `k`: `(w0, wk)`.
pub fn single_task_params(arch: &MtnnArchitecture, params: &ParamVector, k: usize) -> ParamVector {
    let mut values = params.shared().to_vec();
    values.extend_from_slice(params.task(k));
    ParamVector::from_values(&arch.single_task(k), values).expect("subnetwork parameter count")
}
