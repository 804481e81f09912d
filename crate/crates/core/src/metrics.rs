//! Confusion matrices and support-weighted precision, recall and F1.
//!
//! Decision rules: argmax for categorical heads (ties go to the lowest index),
//! `logit > 0` for the binary-from-logits head (a logit of exactly 0 is class 0).
//! A class never predicted has precision 0; its F1 is 0 when precision and
//! recall are both 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::LossKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub task: usize,
    pub classes: usize,
    /// Row-major; rows are true classes, columns predicted classes.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(task: usize, classes: usize) -> Self {
        Self {
            task,
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(task: usize, rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(Self {
            task,
            classes,
            counts: rows.concat(),
        })
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn confusion(task: usize, outputs: &Matrix, labels: &Matrix, kind: LossKind) -> Result<ConfusionMatrix> {
    if outputs.shape() != labels.shape() {
        return Err(Error::dims(
            "confusion",
            format!("{}x{}", labels.rows(), labels.cols()),
            format!("{}x{}", outputs.rows(), outputs.cols()),
        ));
    }
    match kind {
        LossKind::CategoricalCrossEntropy => {
            let mut cm = ConfusionMatrix::new(task, outputs.cols());
            for r in 0..outputs.rows() {
                cm.record(argmax(labels.row(r)), argmax(outputs.row(r)));
            }
            Ok(cm)
        }
        LossKind::BinaryCrossEntropyFromLogits => {
            if outputs.cols() != 1 {
                return Err(Error::dims("confusion (binary head)", 1, outputs.cols()));
            }
            let mut cm = ConfusionMatrix::new(task, 2);
            for r in 0..outputs.rows() {
                let truth = usize::from(labels.get(r, 0) > 0.5);
                let pred = usize::from(outputs.get(r, 0) > 0.0);
                cm.record(truth, pred);
            }
            Ok(cm)
        }
        LossKind::Mse => Err(Error::InvalidArgument(
            "classification metrics are undefined for a regression task".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn weighted_scores(cm: &ConfusionMatrix) -> Result<WeightedScores> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let mut scores = WeightedScores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for c in 0..cm.classes {
        let support = cm.support(c);
        if support == 0 {
            continue;
        }
        let tp = cm.get(c, c) as f64;
        let predicted = cm.predicted(c);
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / total as f64;
        scores.precision += w * precision;
        scores.recall += w * recall;
        scores.f1 += w * f1;
    }
    Ok(scores)
}

/// Test-set scores of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl TaskMetrics {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        let s = weighted_scores(&cm)?;
        Ok(Self {
            task: cm.task,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            accuracy: cm.trace() as f64 / cm.total() as f64,
            confusion: cm,
        })
    }
}
