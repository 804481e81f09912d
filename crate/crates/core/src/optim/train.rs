//! Epoch-level training loops with callbacks.
//!
//! All four methods share one driver. Plain SG and the implemented
//! epoch-alternating method draw each epoch's mini-batches from a fresh random
//! split of the training store; the theoretical SAT-SG and ATE-SG draw
//! `⌊T/B⌋` independent samples per epoch. A shared epoch and a task-specific
//! epoch each count as one epoch toward the budget `E`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{epoch_split, sample_batch, sampled_batches_per_epoch};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::loss::{LabeledBatch, LossValue};
use crate::metrics::TaskMetrics;
use crate::model::{ParamVector, Scope};
use crate::objective::Objective;
use crate::optim::callbacks::{EarlyStopConfig, EarlyStopping, PlateauConfig, ReduceOnPlateau};
use crate::optim::steps::{sat_sg_step, scoped_step, StepReport};
use crate::optim::SchedulePair;
use crate::verify::WorkCounter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sg,
    SatSg,
    AteSg,
    AteSgImplemented,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sg, Method::SatSg, Method::AteSg, Method::AteSgImplemented];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sg => "sg",
            Method::SatSg => "sat_sg",
            Method::AteSg => "ate_sg",
            Method::AteSgImplemented => "ate_sg_implemented",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown optimizer `{s}`")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub batch_size: usize,
    /// Total epoch budget `E`.
    pub epochs: usize,
    /// `E0`
    pub shared_epochs: usize,
    /// `Ets`
    pub task_epochs: usize,
    pub schedules: SchedulePair,
    pub plateau: Option<PlateauConfig>,
    pub early_stop: Option<EarlyStopConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.shared_epochs == 0 || self.task_epochs == 0 {
            return Err(Error::Config(
                "batch size, epoch budget, E0 and Ets must all be at least 1".into(),
            ));
        }
        if let Some(p) = &self.plateau {
            p.validate()?;
            if !(self.schedules.shared.is_plateau_driven() && self.schedules.task_specific.is_plateau_driven()) {
                return Err(Error::Config(
                    "the plateau callback requires plateau-driven schedules".into(),
                ));
            }
        }
        if let Some(e) = &self.early_stop {
            e.validate()?;
        }
        Ok(())
    }

    fn callbacks_active(&self) -> bool {
        self.plateau.is_some() || self.early_stop.is_some()
    }
}

/// Which block the steps of an epoch update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Full,
    Shared,
    TaskSpecific,
    /// Per-iteration alternation (SAT-SG).
    Alternating,
}

impl Phase {
    pub fn letter(self) -> char {
        match self {
            Phase::Full => 'F',
            Phase::Shared => 'S',
            Phase::TaskSpecific => 'T',
            Phase::Alternating => 'A',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub iterations: usize,
    /// Batch-size-weighted mean of the losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_task_losses: Vec<f64>,
    pub val_task_losses: Vec<f64>,
    /// Rate in effect at the start of the epoch.
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    EarlyStopped,
    NonFinite,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::BudgetExhausted => "budget_exhausted",
            StopReason::EarlyStopped => "early_stopped",
            StopReason::NonFinite => "non_finite",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub method: Method,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub diagnostic: Option<String>,
    /// Epoch whose parameters were restored by early stopping.
    pub best_epoch: Option<usize>,
    pub iterations: u64,
    pub work: WorkCounter,
    /// Filled by the experiment harness after evaluation on the test store.
    pub test_metrics: Vec<TaskMetrics>,
}

impl RunHistory {
    pub fn learning_rates(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    pub fn phase_trace(&self) -> String {
        self.epochs.iter().map(|e| e.phase.letter()).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub history: RunHistory,
}

struct Runner<'a> {
    objective: &'a Objective,
    cfg: &'a TrainConfig,
    train: &'a LabeledBatch,
    validation: Option<&'a LabeledBatch>,
    rng: &'a mut Rng,
    params: ParamVector,
    iteration: u64,
    epoch: usize,
    rates: [f64; 2],
    plateau: Option<ReduceOnPlateau>,
    early: Option<EarlyStopping>,
    history: RunHistory,
    stopped: Option<StopReason>,
}

#[derive(Default)]
struct LossAccumulator {
    rows: usize,
    total: f64,
    per_task: Vec<f64>,
}

impl LossAccumulator {
    fn add(&mut self, rows: usize, loss: &LossValue) {
        if self.per_task.is_empty() {
            self.per_task = vec![0.0; loss.per_task.len()];
        }
        self.rows += rows;
        self.total += rows as f64 * loss.total;
        for (acc, l) in self.per_task.iter_mut().zip(&loss.per_task) {
            *acc += rows as f64 * l;
        }
    }

    fn mean(&self) -> (f64, Vec<f64>) {
        let n = self.rows.max(1) as f64;
        (self.total / n, self.per_task.iter().map(|v| v / n).collect())
    }
}

impl Runner<'_> {
    fn rate(&self, scope: Scope, i: u64) -> f64 {
        let s = &self.cfg.schedules;
        match scope {
            Scope::TaskSpecificOnly if s.task_specific.is_plateau_driven() => self.rates[1],
            Scope::TaskSpecificOnly => s.task_specific.rate(i),
            _ if s.shared.is_plateau_driven() => self.rates[0],
            _ => s.shared.rate(i),
        }
    }

    fn sampled_batches(&self) -> Result<usize> {
        let t = sampled_batches_per_epoch(self.train.len(), self.cfg.batch_size);
        if t == 0 {
            return Err(Error::Config(format!(
                "batch size {} exceeds the {} training rows",
                self.cfg.batch_size,
                self.train.len()
            )));
        }
        Ok(t)
    }

    /// Runs one epoch; returns `false` once training must stop.
    fn run_epoch(&mut self, phase: Phase) -> Result<bool> {
        let scope = match phase {
            Phase::Full => Scope::Full,
            Phase::Shared => Scope::SharedOnly,
            Phase::TaskSpecific => Scope::TaskSpecificOnly,
            Phase::Alternating => Scope::SharedOnly,
        };
        let lr = self.rate(scope, self.iteration);
        let mut acc = LossAccumulator::default();
        let mut iterations = 0;
        let outcome = self.epoch_steps(phase, scope, &mut acc, &mut iterations);
        match outcome {
            Err(Error::NonFinite(msg)) => return Ok(self.abort(msg)),
            Err(e) => return Err(e),
            Ok(()) => {}
        }

        let (train_loss, train_task_losses) = acc.mean();
        let (val_loss, val_task_losses) = match self.validation {
            Some(v) => match self.objective.evaluate(&self.params, v) {
                Ok(l) => (l.total, l.per_task),
                Err(Error::NonFinite(msg)) => return Ok(self.abort(format!("validation: {msg}"))),
                Err(e) => return Err(e),
            },
            None => (f64::NAN, Vec::new()),
        };
        self.history.epochs.push(EpochRecord {
            epoch: self.epoch,
            phase,
            iterations,
            train_loss,
            val_loss,
            train_task_losses,
            val_task_losses,
            lr,
        });
        if !train_loss.is_finite() || (self.validation.is_some() && !val_loss.is_finite()) {
            return Ok(self.abort(format!("epoch {} loss is not finite", self.epoch)));
        }

        let epoch = self.epoch;
        self.epoch += 1;
        if let Some(p) = self.plateau.as_mut() {
            if let Some(r) = p.update(val_loss, self.rates[0]) {
                self.rates[0] = r;
                self.rates[1] *= p.config.factor;
            }
        }
        if let Some(es) = self.early.as_mut() {
            if es.update(epoch, val_loss, &self.params) {
                if let Some(best) = es.best_params.take() {
                    self.params = best;
                }
                self.history.best_epoch = es.best_epoch;
                self.stopped = Some(StopReason::EarlyStopped);
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn record_step(&mut self, report: &StepReport, rows: usize, acc: &mut LossAccumulator) {
        acc.add(rows, &report.loss);
        self.history.work += report.work;
    }

    fn epoch_steps(&mut self, phase: Phase, scope: Scope, acc: &mut LossAccumulator, iterations: &mut usize) -> Result<()> {
        match (self.cfg.method, phase) {
            (Method::SatSg, _) => {
                let t = self.sampled_batches()?;
                for _ in 0..t {
                    let eta0 = self.rate(Scope::SharedOnly, self.iteration);
                    let eta_ts = self.rate(Scope::TaskSpecificOnly, self.iteration);
                    let step = sat_sg_step(
                        self.objective,
                        &mut self.params,
                        self.train,
                        self.cfg.batch_size,
                        eta0,
                        eta_ts,
                        self.rng,
                    )?;
                    self.record_step(&step.shared, self.cfg.batch_size, acc);
                    self.history.work += step.task_specific.work;
                    self.iteration += 1;
                    *iterations += 1;
                }
            }
            (Method::AteSg, _) => {
                let t = self.sampled_batches()?;
                for _ in 0..t {
                    let batch = sample_batch(self.train, self.cfg.batch_size, self.rng)?;
                    let eta = self.rate(scope, self.iteration);
                    let report = scoped_step(self.objective, &mut self.params, &batch, scope, eta)?;
                    self.record_step(&report, batch.len(), acc);
                    self.iteration += 1;
                    *iterations += 1;
                }
            }
            (Method::Sg | Method::AteSgImplemented, _) => {
                for batch in epoch_split(self.train, self.cfg.batch_size, self.rng)? {
                    let eta = self.rate(scope, self.iteration);
                    let report = scoped_step(self.objective, &mut self.params, &batch, scope, eta)?;
                    self.record_step(&report, batch.len(), acc);
                    self.iteration += 1;
                    *iterations += 1;
                }
            }
        }
        Ok(())
    }

    fn abort(&mut self, msg: String) -> bool {
        self.history.diagnostic = Some(msg);
        self.stopped = Some(StopReason::NonFinite);
        false
    }

    fn run(mut self) -> Result<TrainOutcome> {
        let budget = self.cfg.epochs;
        match self.cfg.method {
            Method::Sg => while self.epoch < budget && self.run_epoch(Phase::Full)? {},
            Method::SatSg => while self.epoch < budget && self.run_epoch(Phase::Alternating)? {},
            Method::AteSg | Method::AteSgImplemented => {
                'outer: while self.epoch < budget {
                    let mut e0 = 0;
                    while e0 < self.cfg.shared_epochs && self.epoch < budget {
                        if !self.run_epoch(Phase::Shared)? {
                            break 'outer;
                        }
                        e0 += 1;
                    }
                    let mut ets = 0;
                    while ets < self.cfg.task_epochs && self.epoch < budget {
                        if !self.run_epoch(Phase::TaskSpecific)? {
                            break 'outer;
                        }
                        ets += 1;
                    }
                }
            }
        }
        self.history.stop_reason = self.stopped.unwrap_or(StopReason::BudgetExhausted);
        self.history.iterations = self.iteration;
        Ok(TrainOutcome {
            params: self.params,
            history: self.history,
        })
    }
}

/// Trains `objective` from `init` with the configured method.
///
/// `rng` drives batch selection only; the same seed therefore yields the same
/// batch sequence for methods that share a batching regime.
pub fn train(
    objective: &Objective,
    init: ParamVector,
    cfg: &TrainConfig,
    train_store: &LabeledBatch,
    validation: Option<&LabeledBatch>,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.callbacks_active() && validation.is_none() {
        return Err(Error::Config("callbacks monitor the validation loss; no validation store given".into()));
    }
    let rates = [cfg.schedules.shared.rate(0), cfg.schedules.task_specific.rate(0)];
    let seed = rng.seed();
    let runner = Runner {
        objective,
        cfg,
        train: train_store,
        validation,
        rng,
        params: init,
        iteration: 0,
        epoch: 0,
        rates,
        plateau: cfg.plateau.map(ReduceOnPlateau::new),
        early: cfg.early_stop.map(EarlyStopping::new),
        history: RunHistory {
            method: cfg.method,
            seed,
            epochs: Vec::new(),
            stop_reason: StopReason::BudgetExhausted,
            diagnostic: None,
            best_epoch: None,
            iterations: 0,
            work: WorkCounter::default(),
            test_metrics: Vec::new(),
        },
        stopped: None,
    };
    runner.run()
}

/// Plain SG over per-epoch random splits.
pub fn train_sg(
    objective: &Objective,
    init: ParamVector,
    cfg: &TrainConfig,
    train_store: &LabeledBatch,
    validation: Option<&LabeledBatch>,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        method: Method::Sg,
        ..cfg.clone()
    };
    train(objective, init, &cfg, train_store, validation, rng)
}

/// Implemented ATE-SG: alternate `E0` shared epochs and `Ets` task-specific
/// epochs over per-epoch random splits until the budget `E` is spent.
pub fn train_implemented_ate(
    objective: &Objective,
    init: ParamVector,
    cfg: &TrainConfig,
    train_store: &LabeledBatch,
    validation: Option<&LabeledBatch>,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        method: Method::AteSgImplemented,
        ..cfg.clone()
    };
    train(objective, init, &cfg, train_store, validation, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{epoch_split, generate_synthetic, to_batch};
    use crate::loss::{LossConfig, LossKind};
    use crate::model::{init_params, MtnnArchitecture};
    use crate::optim::Schedule;

    fn setup(n: usize) -> (Objective, LabeledBatch, LabeledBatch, ParamVector) {
        let arch = MtnnArchitecture::quadrant_circle(6);
        let loss = LossConfig::unweighted(vec![LossKind::CategoricalCrossEntropy, LossKind::BinaryCrossEntropyFromLogits]);
        let train = to_batch(&generate_synthetic(n, &mut Rng::new(1)).unwrap()).unwrap();
        let val = to_batch(&generate_synthetic(20, &mut Rng::new(2)).unwrap()).unwrap();
        let init = init_params(&arch, &mut Rng::new(3));
        (Objective::new(arch, loss).unwrap(), train, val, init)
    }

    fn config(method: Method, batch: usize, epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            method,
            batch_size: batch,
            epochs,
            shared_epochs: 1,
            task_epochs: 1,
            schedules: SchedulePair::same(Schedule::constant(lr).unwrap()),
            plateau: None,
            early_stop: None,
        }
    }

    #[test]
    fn alternating_trace() {
        let (obj, train_store, val, init) = setup(4);
        for method in [Method::AteSg, Method::AteSgImplemented] {
            let out = train(&obj, init.clone(), &config(method, 2, 4, 0.01), &train_store, Some(&val), &mut Rng::new(0)).unwrap();
            let h = &out.history;
            assert_eq!(h.phase_trace(), "STST");
            assert!(h.epochs.iter().all(|e| e.iterations == 2));
            assert_eq!(h.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
            assert_eq!(h.iterations, 8);
            assert_eq!(h.stop_reason, StopReason::BudgetExhausted);
        }
        let out = train(&obj, init, &config(Method::SatSg, 2, 4, 0.01), &train_store, Some(&val), &mut Rng::new(0)).unwrap();
        assert_eq!(out.history.phase_trace(), "AAAA");
        assert_eq!(out.history.iterations, 8);
    }

    #[test]
    fn budget_cuts_a_phase_short() {
        let (obj, train_store, val, init) = setup(4);
        let cfg = TrainConfig {
            shared_epochs: 2,
            task_epochs: 3,
            ..config(Method::AteSgImplemented, 2, 7, 0.01)
        };
        let out = train(&obj, init, &cfg, &train_store, Some(&val), &mut Rng::new(0)).unwrap();
        assert_eq!(out.history.phase_trace(), "SSTTTSS");
    }

    #[test]
    fn split_epochs_cover_the_store() {
        let (obj, train_store, _, init) = setup(5);
        let out = train(&obj, init, &config(Method::Sg, 2, 3, 0.01), &train_store, None, &mut Rng::new(0)).unwrap();
        assert!(out.history.epochs.iter().all(|e| e.iterations == 3 && e.phase == Phase::Full));
        assert!(out.history.epochs.iter().all(|e| e.val_loss.is_nan()));
    }

    #[test]
    fn phases_are_pure() {
        let (obj, train_store, val, init) = setup(12);
        let run = |epochs| {
            train(&obj, init.clone(), &config(Method::AteSgImplemented, 4, epochs, 0.05), &train_store, Some(&val), &mut Rng::new(8))
                .unwrap()
                .params
        };
        let (e1, e2) = (run(1), run(2));
        assert_eq!(e1.task_specific(), init.task_specific());
        assert_ne!(e1.shared(), init.shared());
        assert_eq!(e2.shared(), e1.shared());
        assert_ne!(e2.task_specific(), e1.task_specific());
    }

    #[test]
    fn first_epoch_uses_the_same_split_stream() {
        let (obj, train_store, _, init) = setup(10);
        for (method, scope) in [(Method::Sg, Scope::Full), (Method::AteSgImplemented, Scope::SharedOnly)] {
            let out = train(&obj, init.clone(), &config(method, 3, 1, 0.05), &train_store, None, &mut Rng::new(4)).unwrap();
            let mut p = init.clone();
            for batch in epoch_split(&train_store, 3, &mut Rng::new(4)).unwrap() {
                scoped_step(&obj, &mut p, &batch, scope, 0.05).unwrap();
            }
            assert_eq!(out.params, p, "{method}");
        }
    }

    #[test]
    fn deterministic() {
        let (obj, train_store, val, init) = setup(16);
        for method in Method::ALL {
            let a = train(&obj, init.clone(), &config(method, 4, 5, 0.05), &train_store, Some(&val), &mut Rng::new(6)).unwrap();
            let b = train(&obj, init.clone(), &config(method, 4, 5, 0.05), &train_store, Some(&val), &mut Rng::new(6)).unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn divergence_aborts_with_history() {
        use crate::linalg::Matrix;
        use crate::model::Activation::Linear;
        let arch = MtnnArchitecture::from_widths(1, &[(1, Linear)], &[vec![(1, Linear)]]).unwrap();
        let obj = Objective::new(arch.clone(), LossConfig::unweighted(vec![LossKind::Mse])).unwrap();
        let x = Matrix::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let store = LabeledBatch::new(x.clone(), vec![x]).unwrap();
        let init = ParamVector::from_values(&arch, vec![0.5, 0.1, 0.5, 0.1]).unwrap();
        let out = train(&obj, init, &config(Method::Sg, 2, 500, 10.0), &store, Some(&store), &mut Rng::new(0)).unwrap();
        assert_eq!(out.history.stop_reason, StopReason::NonFinite);
        assert!(out.history.diagnostic.is_some());
        assert!(out.history.epochs.len() < 500);
    }

    #[test]
    fn plateau_trace_and_early_stop_restore() {
        let (obj, train_store, val, init) = setup(32);
        let cfg = TrainConfig {
            schedules: SchedulePair::same(Schedule::plateau_driven(0.5).unwrap()),
            plateau: Some(PlateauConfig {
                patience: 2,
                factor: 0.75,
                min_delta: 1e-4,
            }),
            early_stop: Some(EarlyStopConfig {
                patience: 6,
                min_delta: 0.0,
            }),
            ..config(Method::AteSgImplemented, 8, 200, 0.5)
        };
        let out = train(&obj, init, &cfg, &train_store, Some(&val), &mut Rng::new(1)).unwrap();
        let h = &out.history;
        let lrs = h.learning_rates();
        assert!(lrs.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] * 0.75), "{lrs:?}");
        assert!(lrs.windows(2).any(|w| w[1] < w[0]));
        assert_eq!(h.stop_reason, StopReason::EarlyStopped);
        let best = h.best_epoch.unwrap();
        let min = h.val_losses().into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(h.epochs[best].val_loss, min);
        assert_eq!(obj.evaluate(&out.params, &val).unwrap().total, min);
        assert_eq!(h.epochs.len(), best + 1 + 6);
    }

    #[test]
    fn callbacks_need_validation_and_plateau_schedule() {
        let (obj, train_store, _, init) = setup(8);
        let with_es = TrainConfig {
            early_stop: Some(EarlyStopConfig::default()),
            ..config(Method::Sg, 4, 2, 0.1)
        };
        assert!(train(&obj, init.clone(), &with_es, &train_store, None, &mut Rng::new(0)).is_err());
        let bad = TrainConfig {
            plateau: Some(PlateauConfig::default()),
            ..config(Method::Sg, 4, 2, 0.1)
        };
        assert!(bad.validate().is_err());
        assert!(config(Method::AteSg, 16, 2, 0.1).validate().is_ok());
        let (obj2, small, _, init2) = setup(8);
        assert!(train(&obj2, init2, &config(Method::AteSg, 16, 2, 0.1), &small, None, &mut Rng::new(0)).is_err());
        let _ = obj;
    }
}
