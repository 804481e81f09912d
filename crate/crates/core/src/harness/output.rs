//! Run-directory layout:
//!
//! - `history_<optimizer>_<seed>.csv`: per-epoch losses and learning rate
//! - `metrics_<optimizer>_<seed>.json`: stop reason, counters, test metrics
//! - `summary.csv`: per-epoch min/median/max loss envelopes per optimizer
//! - `metrics_summary.csv`: seed-averaged test scores per task
//! - `audit.txt`: parameter partition, backward costs, schedule checks
//!
//! Floats are written with 17 significant digits so they reload exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{DataSource, ExperimentConfig};
use crate::harness::run::Summary;
use crate::metrics::TaskMetrics;
use crate::optim::{validate_schedule, CycleConfig, EpochRecord, Method, RunHistory, StopReason};
use crate::verify::{audit_costs, WorkCounter};

/// One row of a history CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_task_losses: Vec<f64>,
    pub val_task_losses: Vec<f64>,
    pub lr: f64,
}

impl From<&EpochRecord> for HistoryRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            train_task_losses: r.train_task_losses.clone(),
            val_task_losses: r.val_task_losses.clone(),
            lr: r.lr,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn history_file_name(method: Method, seed: u64) -> String {
    format!("history_{method}_{seed}.csv")
}

pub fn metrics_file_name(method: Method, seed: u64) -> String {
    format!("metrics_{method}_{seed}.json")
}

pub fn history_csv(history: &RunHistory, tasks: usize) -> String {
    let mut s = String::from("epoch,train_loss,val_loss");
    for k in 1..=tasks {
        let _ = write!(s, ",train_loss_task{k}");
    }
    for k in 1..=tasks {
        let _ = write!(s, ",val_loss_task{k}");
    }
    s.push_str(",lr\n");
    for r in &history.epochs {
        let _ = write!(s, "{},{},{}", r.epoch, num(r.train_loss), num(r.val_loss));
        let pad = |v: &[f64]| (0..tasks).map(|k| num(v.get(k).copied().unwrap_or(f64::NAN))).collect::<Vec<_>>();
        for v in pad(&r.train_task_losses).into_iter().chain(pad(&r.val_task_losses)) {
            s.push(',');
            s.push_str(&v);
        }
        let _ = writeln!(s, ",{}", num(r.lr));
    }
    s
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| perr(1, "empty file".into()))?.split(',').collect();
    if header.len() < 4 || !header.len().is_multiple_of(2) || header[..3] != ["epoch", "train_loss", "val_loss"] {
        return Err(perr(1, "unexpected header".into()));
    }
    let tasks = (header.len() - 4) / 2;
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(perr(i + 2, format!("expected {} fields, found {}", header.len(), f.len())));
            }
            let x = |s: &str| s.parse::<f64>().map_err(|e| perr(i + 2, format!("`{s}`: {e}")));
            Ok(HistoryRow {
                epoch: f[0].parse().map_err(|e| perr(i + 2, format!("epoch: {e}")))?,
                train_loss: x(f[1])?,
                val_loss: x(f[2])?,
                train_task_losses: f[3..3 + tasks].iter().map(|s| x(s)).collect::<Result<_>>()?,
                val_task_losses: f[3 + tasks..3 + 2 * tasks].iter().map(|s| x(s)).collect::<Result<_>>()?,
                lr: x(f[3 + 2 * tasks])?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    optimizer: Method,
    seed: u64,
    stop_reason: StopReason,
    diagnostic: &'a Option<String>,
    epochs_run: usize,
    best_epoch: Option<usize>,
    iterations: u64,
    work: WorkCounter,
    test_metrics: &'a [TaskMetrics],
}

pub fn metrics_json(h: &RunHistory) -> String {
    let m = RunMetrics {
        optimizer: h.method,
        seed: h.seed,
        stop_reason: h.stop_reason,
        diagnostic: &h.diagnostic,
        epochs_run: h.epochs.len(),
        best_epoch: h.best_epoch,
        iterations: h.iterations,
        work: h.work,
        test_metrics: &h.test_metrics,
    };
    let mut s = serde_json::to_string_pretty(&m).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn summary_csv(summary: &Summary) -> String {
    let mut s = String::from("optimizer,epoch,runs,train_min,train_median,train_max,val_min,val_median,val_max\n");
    for o in &summary.optimizers {
        for r in &o.envelope {
            let _ = write!(s, "{},{},{}", o.method, r.epoch, r.runs);
            for v in r.train.iter().chain(&r.val) {
                s.push(',');
                s.push_str(&num(*v));
            }
            s.push('\n');
        }
    }
    s
}

/// Table of seed-averaged recall, precision and F1 per task.
pub fn metrics_summary_csv(summary: &Summary) -> String {
    let tasks: Vec<usize> = summary
        .optimizers
        .iter()
        .flat_map(|o| o.mean_metrics.iter().map(|m| m.task))
        .fold(Vec::new(), |mut acc, t| {
            if !acc.contains(&t) {
                acc.push(t);
            }
            acc
        });
    let mut s = String::from("optimizer,runs,excluded");
    for t in &tasks {
        let k = t + 1;
        let _ = write!(s, ",task{k}_recall,task{k}_precision,task{k}_f1");
    }
    s.push_str(",median_tail_val_std\n");
    for o in &summary.optimizers {
        let _ = write!(s, "{},{},{}", o.method, o.runs, o.excluded);
        for t in &tasks {
            match o.mean_metrics.iter().find(|m| m.task == *t) {
                Some(m) => {
                    let _ = write!(s, ",{},{},{}", num(m.recall), num(m.precision), num(m.f1));
                }
                None => s.push_str(",,,"),
            }
        }
        let _ = writeln!(s, ",{}", num(o.median_tail_val_std));
    }
    s
}

pub fn audit_text(cfg: &ExperimentConfig) -> Result<String> {
    let mut s = audit_costs(&cfg.arch).to_report();
    let [train, _, _] = crate::data::split_sizes(cfg_rows(cfg)?, cfg.split)?;
    let cycle = CycleConfig {
        shared_epochs: cfg.shared_epochs,
        task_epochs: cfg.task_epochs,
        batches_per_epoch: crate::data::sampled_batches_per_epoch(train, cfg.batch_size).max(1),
        batch_size: cfg.batch_size,
        epoch_budget: cfg.epochs,
    };
    let report = validate_schedule(&cfg.schedules()?, &cycle)?;
    for c in &report.sat_conditions {
        let _ = writeln!(s, "schedule.sat.{} = {:?}", c.name, c.verdict);
    }
    for c in &report.ate_conditions {
        let _ = writeln!(s, "schedule.ate.{} = {:?}", c.name, c.verdict);
    }
    let _ = writeln!(s, "schedule.fixed_rate_regime = {}", report.fixed_rate_regime);
    Ok(s)
}

fn cfg_rows(cfg: &ExperimentConfig) -> Result<usize> {
    match &cfg.data {
        DataSource::Synthetic { n } => Ok(*n),
        DataSource::Csv(p) => Ok(crate::data::read_csv(p)?.len()),
    }
}

/// Writes every output file into `dir`. Nothing is written when `histories`
/// is empty.
pub fn emit_outputs(cfg: &ExperimentConfig, histories: &[RunHistory], summary: &Summary, dir: &Path) -> Result<Vec<PathBuf>> {
    if histories.is_empty() {
        return Err(Error::InvalidArgument("no run histories to write".into()));
    }
    let tasks = cfg.arch.task_count();
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for h in histories {
        files.push((dir.join(history_file_name(h.method, h.seed)), history_csv(h, tasks)));
        files.push((dir.join(metrics_file_name(h.method, h.seed)), metrics_json(h)));
    }
    files.push((dir.join("summary.csv"), summary_csv(summary)));
    files.push((dir.join("metrics_summary.csv"), metrics_summary_csv(summary)));
    files.push((dir.join("audit.txt"), audit_text(cfg)?));

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (path, content) in &files {
        fs::write(path, content).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
