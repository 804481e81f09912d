//! Seed sweeps across optimizers and the cross-seed summary.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::Serialize;

use crate::data::{generate_synthetic, read_csv, split, to_batch, DatasetSplit, Scaler};
use crate::error::{Error, Result};
use crate::harness::config::{DataSource, ExperimentConfig};
use crate::linalg::Rng;
use crate::loss::LossKind;
use crate::metrics::{confusion, TaskMetrics};
use crate::model::{init_params, ParamVector};
use crate::objective::Objective;
use crate::optim::{train, Method, RunHistory, StopReason};

/// Substreams of a run seed. Every optimizer of a seed starts from the same
/// weights and draws from the same batch stream.
pub const INIT_STREAM: u64 = 0;
pub const BATCH_STREAM: u64 = 1;
/// Substreams of the dataset seed.
pub const SAMPLE_STREAM: u64 = 0;
pub const SPLIT_STREAM: u64 = 1;

/// Generates or loads the dataset, splits it and standardizes the inputs.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    let points = match &cfg.data {
        DataSource::Synthetic { n } => generate_synthetic(*n, &mut Rng::with_stream(cfg.data_seed, SAMPLE_STREAM))?,
        DataSource::Csv(path) => read_csv(path)?,
    };
    let data = to_batch(&points)?;
    if data.task_count() != cfg.arch.task_count() {
        return Err(Error::Config(format!(
            "dataset has {} tasks, architecture {}",
            data.task_count(),
            cfg.arch.task_count()
        )));
    }
    let raw = split(&data, cfg.split, &mut Rng::with_stream(cfg.data_seed, SPLIT_STREAM))?;
    Ok(Scaler::standardize(&raw)?.1)
}

/// Test-set metrics for every classification task.
pub fn evaluate_tasks(objective: &Objective, params: &ParamVector, data: &crate::loss::LabeledBatch) -> Result<Vec<TaskMetrics>> {
    let outputs = objective.predict(params, data.inputs())?;
    let cfg = objective.loss_config();
    (0..cfg.task_count())
        .filter(|&k| cfg.kind(k) != LossKind::Mse)
        .map(|k| TaskMetrics::from_confusion(confusion(k, &outputs[k], data.labels(k), cfg.kind(k))?))
        .collect()
}

/// Trains one (optimizer, seed) pair and scores it on the test store.
pub fn run_single(cfg: &ExperimentConfig, data: &DatasetSplit, method: Method, seed: u64) -> Result<RunHistory> {
    let objective = Objective::new(cfg.arch.clone(), cfg.loss.clone())?;
    let init = init_params(&cfg.arch, &mut Rng::with_stream(seed, INIT_STREAM));
    let mut rng = Rng::with_stream(seed, BATCH_STREAM);
    let mut outcome = train(
        &objective,
        init,
        &cfg.train_config(method)?,
        &data.train,
        Some(&data.validation),
        &mut rng,
    )?;
    outcome.history.seed = seed;
    if outcome.history.stop_reason != StopReason::NonFinite {
        match evaluate_tasks(&objective, &outcome.params, &data.test) {
            Ok(m) => outcome.history.test_metrics = m,
            Err(Error::NonFinite(msg)) => {
                outcome.history.stop_reason = StopReason::NonFinite;
                outcome.history.diagnostic = Some(format!("test evaluation: {msg}"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome.history)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub task: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Per-epoch spread of a loss over the runs that reached that epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub epoch: usize,
    pub runs: usize,
    pub train: [f64; 3],
    pub val: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizerSummary {
    pub method: Method,
    pub runs: usize,
    /// Runs that stopped on a non-finite value; left out of every statistic.
    pub excluded: usize,
    pub mean_metrics: Vec<MeanMetrics>,
    pub envelope: Vec<EnvelopeRow>,
    /// (seed, std of the validation loss over the final half of the epochs)
    pub tail_val_std: Vec<(u64, f64)>,
    pub median_tail_val_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub optimizers: Vec<OptimizerSummary>,
}

impl Summary {
    pub fn get(&self, method: Method) -> Option<&OptimizerSummary> {
        self.optimizers.iter().find(|s| s.method == method)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Std of the last `⌈n/2⌉` validation losses.
pub fn tail_std(val_losses: &[f64]) -> f64 {
    std_dev(&val_losses[val_losses.len() / 2..])
}

fn spread(values: &[f64]) -> [f64; 3] {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [min, median(values), max]
}

pub fn summarize(histories: &[RunHistory]) -> Summary {
    let mut methods: Vec<Method> = histories.iter().map(|h| h.method).collect();
    methods.dedup();
    methods.sort_unstable();
    methods.dedup();
    let optimizers = methods
        .into_iter()
        .map(|method| {
            let all: Vec<&RunHistory> = histories.iter().filter(|h| h.method == method).collect();
            let ok: Vec<&RunHistory> = all
                .iter()
                .copied()
                .filter(|h| h.stop_reason != StopReason::NonFinite)
                .collect();
            let tasks: Vec<usize> = ok
                .first()
                .map(|h| h.test_metrics.iter().map(|m| m.task).collect())
                .unwrap_or_default();
            let mean_metrics = tasks
                .iter()
                .enumerate()
                .map(|(i, &task)| {
                    let mean = |f: fn(&TaskMetrics) -> f64| ok.iter().map(|h| f(&h.test_metrics[i])).sum::<f64>() / ok.len() as f64;
                    MeanMetrics {
                        task,
                        precision: mean(|m| m.precision),
                        recall: mean(|m| m.recall),
                        f1: mean(|m| m.f1),
                        accuracy: mean(|m| m.accuracy),
                    }
                })
                .collect();
            let longest = ok.iter().map(|h| h.epochs.len()).max().unwrap_or(0);
            let envelope = (0..longest)
                .map(|epoch| {
                    let rows: Vec<_> = ok.iter().filter_map(|h| h.epochs.get(epoch)).collect();
                    let train: Vec<f64> = rows.iter().map(|r| r.train_loss).collect();
                    let val: Vec<f64> = rows.iter().map(|r| r.val_loss).collect();
                    EnvelopeRow {
                        epoch,
                        runs: rows.len(),
                        train: spread(&train),
                        val: spread(&val),
                    }
                })
                .collect();
            let tail_val_std: Vec<(u64, f64)> = ok.iter().map(|h| (h.seed, tail_std(&h.val_losses()))).collect();
            let stds: Vec<f64> = tail_val_std.iter().map(|&(_, s)| s).collect();
            OptimizerSummary {
                method,
                runs: all.len(),
                excluded: all.len() - ok.len(),
                mean_metrics,
                envelope,
                median_tail_val_std: median(&stds),
                tail_val_std,
            }
        })
        .collect();
    Summary { optimizers }
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub histories: Vec<RunHistory>,
    pub summary: Summary,
}

impl Experiment {
    pub fn failed_runs(&self) -> usize {
        self.histories
            .iter()
            .filter(|h| h.stop_reason == StopReason::NonFinite)
            .count()
    }
}

/// One run per (optimizer, seed), spread over the available cores. Results are
/// ordered by optimizer then seed regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let jobs: Vec<(Method, u64)> = cfg
        .optimizers
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunHistory>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(method, seed)) = jobs.get(i) else { break };
                let r = run_single(cfg, &data, method, seed);
                results.lock().expect("no worker panicked while holding the lock")[i] = Some(r);
            });
        }
    });
    let histories = results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&histories);
    Ok(Experiment { histories, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(std_dev(&[1.0, 3.0]), 1.0);
        assert_eq!(tail_std(&[100.0, 1.0, 3.0]), 1.0);
        assert_eq!(tail_std(&[100.0, 50.0, 1.0, 3.0]), 1.0);
    }
}
