#![allow(dead_code)]

use mtnn_core::loss::{LabeledBatch, LossConfig, LossKind};
use mtnn_core::model::{forward, init_params, Activation, LayerSpec, MtnnArchitecture, ParamVector};
use mtnn_core::{Matrix, Objective, Rng};

pub struct Problem {
    pub objective: Objective,
    pub batch: LabeledBatch,
    pub params: ParamVector,
}

/// Pre-activations of ReLU layers closer to 0 than this make central
/// differences straddle the kink.
pub const KINK_MARGIN: f64 = 1e-3;

fn pick<T: Copy>(rng: &mut Rng, items: &[T]) -> T {
    items[rng.below(items.len())]
}

fn hidden(rng: &mut Rng) -> Activation {
    pick(rng, &[Activation::Relu, Activation::Relu, Activation::Linear])
}

/// Random architecture with 2–3 trunk layers, `k` branches and at most
/// `max_params` parameters, paired with random labels, weights and parameters
/// (biases included, so no pre-activation sits exactly at zero).
pub fn random_problem(rng: &mut Rng, tasks: usize, max_params: usize, batch: usize) -> Problem {
    loop {
        let input = 1 + rng.below(3);
        let trunk: Vec<(usize, Activation)> = (0..2 + rng.below(2)).map(|_| (2 + rng.below(4), hidden(rng))).collect();
        let mut kinds = Vec::new();
        let branches: Vec<Vec<(usize, Activation)>> = (0..tasks)
            .map(|_| {
                let mut layers: Vec<(usize, Activation)> = (0..rng.below(3)).map(|_| (2 + rng.below(4), hidden(rng))).collect();
                let kind = pick(rng, &[LossKind::CategoricalCrossEntropy, LossKind::BinaryCrossEntropyFromLogits, LossKind::Mse]);
                kinds.push(kind);
                layers.push(match kind {
                    LossKind::CategoricalCrossEntropy => (2 + rng.below(3), Activation::Softmax),
                    LossKind::BinaryCrossEntropyFromLogits => (1 + rng.below(2), Activation::Linear),
                    LossKind::Mse => (1 + rng.below(3), Activation::Linear),
                });
                layers
            })
            .collect();
        let arch = MtnnArchitecture::from_widths(input, &trunk, &branches).expect("generated shapes chain");
        if arch.param_count() > max_params {
            continue;
        }
        let weights: Vec<f64> = rng.uniform(0.25, 2.0, tasks).unwrap();
        let loss = LossConfig::new(kinds.clone(), weights).unwrap();
        let mut params = init_params(&arch, rng);
        let noise = rng.uniform(-0.5, 0.5, params.len()).unwrap();
        params.as_mut_slice().iter_mut().zip(noise).for_each(|(w, n)| *w += n);
        let inputs = Matrix::new(batch, input, rng.uniform(-2.0, 2.0, batch * input).unwrap()).unwrap();
        let labels = kinds
            .iter()
            .enumerate()
            .map(|(k, kind)| random_labels(rng, *kind, batch, arch.output_width(k)))
            .collect();
        let batch = LabeledBatch::new(inputs, labels).unwrap();
        if kink_distance(&arch, &params, &batch) < KINK_MARGIN {
            continue;
        }
        return Problem {
            objective: Objective::new(arch, loss).unwrap(),
            batch,
            params,
        };
    }
}

pub fn random_labels(rng: &mut Rng, kind: LossKind, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        match kind {
            LossKind::CategoricalCrossEntropy => m.set(r, rng.below(cols), 1.0),
            LossKind::BinaryCrossEntropyFromLogits => {
                for c in 0..cols {
                    m.set(r, c, rng.below(2) as f64);
                }
            }
            LossKind::Mse => {
                for c in 0..cols {
                    m.set(r, c, rng.uniform(-1.0, 1.0, 1).unwrap()[0]);
                }
            }
        }
    }
    m
}

/// Smallest |pre-activation| feeding a ReLU.
pub fn kink_distance(arch: &MtnnArchitecture, params: &ParamVector, batch: &LabeledBatch) -> f64 {
    let (_, trace) = forward(arch, params, batch.inputs()).unwrap();
    let mut min = f64::INFINITY;
    let mut scan = |layers: &[LayerSpec], pre: &[Vec<f64>]| {
        for (l, z) in layers.iter().zip(pre) {
            if l.activation == Activation::Relu {
                min = z.iter().fold(min, |m, v| m.min(v.abs()));
            }
        }
    };
    scan(arch.trunk(), &trace.trunk().pre);
    for k in 0..arch.task_count() {
        scan(arch.branch(k), &trace.branch(k).pre);
    }
    min
}
