//! Task losses, batch projection and the weighted aggregate loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Activation;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Expects probabilities (softmax head) and one-hot labels.
    CategoricalCrossEntropy,
    /// Expects raw logits and 0/1 labels; averaged over output columns.
    BinaryCrossEntropyFromLogits,
    /// Squared error summed over output columns.
    Mse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CategoricalCrossEntropy => "categorical_cross_entropy",
            LossKind::BinaryCrossEntropyFromLogits => "binary_cross_entropy_from_logits",
            LossKind::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "categorical_cross_entropy" => Ok(LossKind::CategoricalCrossEntropy),
            "binary_cross_entropy_from_logits" => Ok(LossKind::BinaryCrossEntropyFromLogits),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Per-task loss kinds and the positive weights `λ1..λK`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    kinds: Vec<LossKind>,
    weights: Vec<f64>,
}

impl LossConfig {
    pub fn new(kinds: Vec<LossKind>, weights: Vec<f64>) -> Result<Self> {
        if kinds.is_empty() || kinds.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} loss kinds but {} weights",
                kinds.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be positive, got {w}")));
        }
        Ok(Self { kinds, weights })
    }

    /// All weights equal to one.
    pub fn unweighted(kinds: Vec<LossKind>) -> Self {
        let weights = vec![1.0; kinds.len()];
        Self { kinds, weights }
    }

    pub fn task_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, k: usize) -> LossKind {
        self.kinds[k]
    }

    pub fn kinds(&self) -> &[LossKind] {
        &self.kinds
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same kinds with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.kinds.clone(), self.weights.iter().map(|w| w * c).collect())
    }

    /// Only task `k`, keeping its weight.
    pub fn single_task(&self, k: usize) -> Self {
        Self {
            kinds: vec![self.kinds[k]],
            weights: vec![self.weights[k]],
        }
    }
}

/// Inputs with one label block per task; all blocks share the row count.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    inputs: Matrix,
    labels: Vec<Matrix>,
}

/// The batch `B^k` seen by task `k`.
#[derive(Clone, Copy, Debug)]
pub struct TaskBatch<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a Matrix,
}

impl LabeledBatch {
    pub fn new(inputs: Matrix, labels: Vec<Matrix>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("a batch needs at least one row".into()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("a batch needs at least one label block".into()));
        }
        for (k, l) in labels.iter().enumerate() {
            if l.rows() != inputs.rows() {
                return Err(Error::dims(
                    "LabeledBatch::new",
                    format!("{} label rows", inputs.rows()),
                    format!("{} in block {}", l.rows(), k + 1),
                ));
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn task_count(&self) -> usize {
        self.labels.len()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self, k: usize) -> &Matrix {
        &self.labels[k]
    }

    pub fn label_blocks(&self) -> &[Matrix] {
        &self.labels
    }

    /// All label blocks side by side.
    pub fn label_matrix(&self) -> Matrix {
        Matrix::hstack(&self.labels).expect("blocks share row count")
    }

    /// Rows `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.iter().map(|l| l.select_rows(indices)).collect(),
        }
    }

    pub fn with_inputs(&self, inputs: Matrix) -> Result<LabeledBatch> {
        LabeledBatch::new(inputs, self.labels.clone())
    }
}

/// Projection onto task `k` (0-based).
pub fn project_batch(batch: &LabeledBatch, k: usize) -> Result<TaskBatch<'_>> {
    if k >= batch.task_count() {
        return Err(Error::InvalidArgument(format!(
            "task index {k} out of range for {} tasks",
            batch.task_count()
        )));
    }
    Ok(TaskBatch {
        inputs: &batch.inputs,
        labels: &batch.labels[k],
    })
}

fn check_shapes(outputs: &Matrix, labels: &Matrix) -> Result<()> {
    if outputs.shape() != labels.shape() {
        return Err(Error::dims(
            "task_loss",
            format!("{}x{}", labels.rows(), labels.cols()),
            format!("{}x{}", outputs.rows(), outputs.cols()),
        ));
    }
    if outputs.rows() == 0 {
        return Err(Error::InvalidArgument("loss over an empty batch".into()));
    }
    if !outputs.is_finite() {
        return Err(Error::NonFinite("network outputs".into()));
    }
    Ok(())
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean over rows of the per-row loss.
pub fn task_loss(kind: LossKind, outputs: &Matrix, labels: &Matrix) -> Result<f64> {
    check_shapes(outputs, labels)?;
    let cols = outputs.cols();
    let mut total = 0.0;
    for r in 0..outputs.rows() {
        let (o, y) = (outputs.row(r), labels.row(r));
        total += match kind {
            LossKind::CategoricalCrossEntropy => {
                let sum: f64 = y.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || y.iter().any(|&v| v < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "categorical labels must be one-hot, row {r} sums to {sum}"
                    )));
                }
                -o.iter()
                    .zip(y)
                    .filter(|(_, &t)| t != 0.0)
                    .map(|(&p, &t)| t * p.clamp(PROB_FLOOR, 1.0).ln())
                    .sum::<f64>()
            }
            LossKind::BinaryCrossEntropyFromLogits => {
                o.iter().zip(y).map(|(&z, &t)| softplus(z) - z * t).sum::<f64>() / cols as f64
            }
            LossKind::Mse => o.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>(),
        };
    }
    Ok(total / outputs.rows() as f64)
}

/// Total `Σ λk ℓk` plus the unscaled task losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub per_task: Vec<f64>,
}

pub fn aggregate_loss(config: &LossConfig, outputs: &[Matrix], batch: &LabeledBatch) -> Result<LossValue> {
    if outputs.len() != config.task_count() || batch.task_count() != config.task_count() {
        return Err(Error::dims(
            "aggregate_loss",
            format!("{} tasks", config.task_count()),
            format!("{} outputs, {} label blocks", outputs.len(), batch.task_count()),
        ));
    }
    let mut per_task = Vec::with_capacity(outputs.len());
    let mut total = 0.0;
    for (k, out) in outputs.iter().enumerate() {
        let tb = project_batch(batch, k)?;
        let l = task_loss(config.kind(k), out, tb.labels)?;
        total += config.weight(k) * l;
        per_task.push(l);
    }
    Ok(LossValue { total, per_task })
}

/// Gradient of `weight · ℓ` with respect to a branch's final pre-activation.
///
/// A softmax head under categorical cross-entropy uses the fused form
/// `(p − y) / |B|`; binary cross-entropy on logits uses `(σ(z) − y) / (|B|·m)`
/// on a linear head. Other pairings go through `∂ℓ/∂output` and the head's
/// activation derivative.
pub fn output_gradient(
    kind: LossKind,
    head: Activation,
    outputs: &Matrix,
    labels: &Matrix,
    weight: f64,
) -> Result<Matrix> {
    check_shapes(outputs, labels)?;
    let (rows, cols) = outputs.shape();
    let scale = weight / rows as f64;
    let mut g = Matrix::zeros(rows, cols);

    if kind == LossKind::CategoricalCrossEntropy && head == Activation::Softmax {
        for r in 0..rows {
            for ((gv, &p), &y) in g.row_mut(r).iter_mut().zip(outputs.row(r)).zip(labels.row(r)) {
                *gv = scale * (p - y);
            }
        }
        return Ok(g);
    }

    // d loss / d output
    for r in 0..rows {
        for ((gv, &o), &y) in g.row_mut(r).iter_mut().zip(outputs.row(r)).zip(labels.row(r)) {
            *gv = match kind {
                LossKind::CategoricalCrossEntropy => {
                    if o > PROB_FLOOR && o <= 1.0 {
                        -scale * y / o
                    } else {
                        0.0
                    }
                }
                LossKind::BinaryCrossEntropyFromLogits => scale * (sigmoid(o) - y) / cols as f64,
                LossKind::Mse => scale * 2.0 * (o - y),
            };
        }
    }
    match head {
        Activation::Linear => {}
        Activation::Relu => {
            for (gv, &o) in g.as_mut_slice().iter_mut().zip(outputs.as_slice()) {
                if o <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        Activation::Softmax => {
            for r in 0..rows {
                let p = outputs.row(r);
                let dot: f64 = g.row(r).iter().zip(p).map(|(a, b)| a * b).sum();
                for (gv, &pv) in g.row_mut(r).iter_mut().zip(p) {
                    *gv = pv * (*gv - dot);
                }
            }
        }
    }
    Ok(g)
}
