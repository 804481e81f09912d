//! Experiment configuration: flat `key = value` text with dotted section keys.
//!
//! Blank lines and `#` comments are ignored. Task numbers in keys are 1-based
//! (`arch.branch.1`, `loss.task.1`). Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::DEFAULT_SPLIT;
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossKind};
use crate::model::{Activation, MtnnArchitecture};
use crate::optim::{EarlyStopConfig, Method, PlateauConfig, Schedule, SchedulePair, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic { n: usize },
    Csv(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Plateau,
    Constant,
    PowerDecay,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub arch: MtnnArchitecture,
    pub loss: LossConfig,
    pub data: DataSource,
    pub split: [f64; 3],
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    pub optimizers: Vec<Method>,
    pub shared_epochs: usize,
    pub task_epochs: usize,
    pub schedule_kind: ScheduleKind,
    pub start_lr: f64,
    pub power: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau: Option<PlateauConfig>,
    pub early_stop: Option<EarlyStopConfig>,
    pub output_dir: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "arch.input",
    "arch.trunk",
    "data.synthetic_n",
    "data.csv",
    "data.split",
    "data.seed",
    "run.seeds",
    "optimizer.kind",
    "optimizer.e0",
    "optimizer.ets",
    "schedule.kind",
    "schedule.start_lr",
    "schedule.power",
    "train.batch_size",
    "train.epochs",
    "callbacks.plateau",
    "callbacks.plateau.patience",
    "callbacks.plateau.factor",
    "callbacks.plateau.min_delta",
    "callbacks.early_stop",
    "callbacks.early_stop.patience",
    "callbacks.early_stop.min_delta",
    "output.dir",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    source: PathBuf,
}

impl Entries {
    fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim().to_string();
            if !is_known(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if map.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(err(format!("key `{key}` given twice")));
            }
        }
        Ok(Self {
            map,
            source: source.to_path_buf(),
        })
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.map.get(key)
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.map.get(key) {
            Some((line, _)) => Error::Parse {
                path: self.source.clone(),
                line: *line,
                msg: format!("{key}: {msg}"),
            },
            None => Error::Config(format!("{}: {key}: {msg}", self.source.display())),
        }
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| self.err(key, "missing required key"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v.parse().map(Some).map_err(|e| self.err(key, format!("`{v}`: {e}"))),
        }
    }

    fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key).map(|(_, v)| v.as_str()) {
            None | Some("false" | "off") => Ok(false),
            Some("true" | "on") => Ok(true),
            Some(v) => Err(self.err(key, format!("expected true/false, found `{v}`"))),
        }
    }

    /// Values of `prefix.1`, `prefix.2`, ... which must be numbered without gaps.
    fn numbered(&self, prefix: &str) -> Result<Vec<(String, &str)>> {
        let mut found: BTreeMap<usize, (String, &str)> = BTreeMap::new();
        for (key, (_, v)) in &self.map {
            if let Some(n) = key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                let idx: usize = n
                    .parse()
                    .ok()
                    .filter(|&i| i >= 1)
                    .ok_or_else(|| self.err(key, "task numbers start at 1"))?;
                found.insert(idx, (key.clone(), v.as_str()));
            }
        }
        for (expected, idx) in (1..).zip(found.keys()) {
            if *idx != expected {
                return Err(Error::Config(format!("{prefix}.{expected} is missing")));
            }
        }
        Ok(found.into_values().collect())
    }
}

fn is_known(key: &str) -> bool {
    if KNOWN_KEYS.contains(&key) {
        return true;
    }
    ["arch.branch.", "loss.task.", "loss.weight."].iter().any(|p| {
        key.strip_prefix(p)
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
    })
}

/// `relu:64, relu:64, softmax:4`
fn parse_layers(s: &str) -> std::result::Result<Vec<(usize, Activation)>, String> {
    s.split(',')
        .map(|item| {
            let (act, width) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("layer `{}` is not `activation:width`", item.trim()))?;
            let act = Activation::parse(act.trim()).map_err(|e| e.to_string())?;
            let width = width.trim().parse().map_err(|e| format!("width `{}`: {e}", width.trim()))?;
            Ok((width, act))
        })
        .collect()
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", v.trim())))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        // Relative paths in the file are relative to the file.
        if let Some(dir) = path.parent() {
            if let DataSource::Csv(p) = &mut cfg.data {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses and validates; `source` is only used in error messages.
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let e = Entries::parse(text, source)?;

        let input: usize = e
            .parsed("arch.input")?
            .ok_or_else(|| e.err("arch.input", "missing required key"))?;
        let trunk = parse_layers(e.required("arch.trunk")?).map_err(|m| e.err("arch.trunk", m))?;
        let branches = e
            .numbered("arch.branch")?
            .into_iter()
            .map(|(key, v)| parse_layers(v).map_err(|m| e.err(&key, m)))
            .collect::<Result<Vec<_>>>()?;
        let arch = MtnnArchitecture::from_widths(input, &trunk, &branches)?;

        let kinds = e
            .numbered("loss.task")?
            .into_iter()
            .map(|(key, v)| LossKind::parse(v).map_err(|m| e.err(&key, m)))
            .collect::<Result<Vec<_>>>()?;
        if kinds.len() != arch.task_count() {
            return Err(Error::Config(format!(
                "{} branches but {} loss.task entries",
                arch.task_count(),
                kinds.len()
            )));
        }
        let weights = (1..=kinds.len())
            .map(|k| e.parsed_or(&format!("loss.weight.{k}"), 1.0))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(k) = e
            .numbered("loss.weight")?
            .iter()
            .map(|(key, _)| key)
            .find(|key| key["loss.weight.".len()..].parse::<usize>().unwrap_or(0) > kinds.len())
        {
            return Err(e.err(k, "no such task"));
        }
        let loss = LossConfig::new(kinds, weights)?;

        let data = match (e.parsed::<usize>("data.synthetic_n")?, e.raw("data.csv")) {
            (Some(n), None) => DataSource::Synthetic { n },
            (None, Some((_, p))) => DataSource::Csv(PathBuf::from(p)),
            _ => return Err(Error::Config("exactly one of data.synthetic_n and data.csv is required".into())),
        };
        let split = match e.raw("data.split") {
            None => DEFAULT_SPLIT,
            Some((_, v)) => {
                let parts: Vec<f64> = parse_list(v).map_err(|m| e.err("data.split", m))?;
                <[f64; 3]>::try_from(parts).map_err(|_| e.err("data.split", "expected three ratios"))?
            }
        };
        let data_seed = e.parsed_or("data.seed", 0u64)?;
        let seeds: Vec<u64> = parse_list(e.required("run.seeds")?).map_err(|m| e.err("run.seeds", m))?;

        let optimizers = e
            .required("optimizer.kind")?
            .split(',')
            .map(Method::parse)
            .collect::<Result<Vec<_>>>()?;
        let shared_epochs = e.parsed_or("optimizer.e0", 1usize)?;
        let task_epochs = e.parsed_or("optimizer.ets", 1usize)?;

        let schedule_kind = match e.raw("schedule.kind").map(|(_, v)| v.as_str()).unwrap_or("plateau") {
            "plateau" => ScheduleKind::Plateau,
            "constant" => ScheduleKind::Constant,
            "power_decay" => ScheduleKind::PowerDecay,
            other => return Err(e.err("schedule.kind", format!("unknown schedule `{other}`"))),
        };
        let start_lr: f64 = e
            .parsed("schedule.start_lr")?
            .ok_or_else(|| e.err("schedule.start_lr", "missing required key"))?;
        let power = e.parsed_or("schedule.power", 1.0)?;
        if schedule_kind != ScheduleKind::PowerDecay && e.raw("schedule.power").is_some() {
            return Err(e.err("schedule.power", "only used by the power_decay schedule"));
        }

        let batch_size: usize = e
            .parsed("train.batch_size")?
            .ok_or_else(|| e.err("train.batch_size", "missing required key"))?;
        let epochs: usize = e
            .parsed("train.epochs")?
            .ok_or_else(|| e.err("train.epochs", "missing required key"))?;

        let plateau = if e.flag("callbacks.plateau")? {
            let d = PlateauConfig::default();
            Some(PlateauConfig {
                patience: e.parsed_or("callbacks.plateau.patience", d.patience)?,
                factor: e.parsed_or("callbacks.plateau.factor", d.factor)?,
                min_delta: e.parsed_or("callbacks.plateau.min_delta", d.min_delta)?,
            })
        } else {
            None
        };
        let early_stop = if e.flag("callbacks.early_stop")? {
            let d = EarlyStopConfig::default();
            Some(EarlyStopConfig {
                patience: e.parsed_or("callbacks.early_stop.patience", d.patience)?,
                min_delta: e.parsed_or("callbacks.early_stop.min_delta", d.min_delta)?,
            })
        } else {
            None
        };
        for (key, on) in [("callbacks.plateau.", plateau.is_some()), ("callbacks.early_stop.", early_stop.is_some())] {
            if let Some(k) = e.map.keys().find(|k| k.starts_with(key)) {
                if !on {
                    return Err(e.err(k, format!("set but {} is not enabled", key.trim_end_matches('.'))));
                }
            }
        }

        let cfg = Self {
            arch,
            loss,
            data,
            split,
            data_seed,
            seeds,
            optimizers,
            shared_epochs,
            task_epochs,
            schedule_kind,
            start_lr,
            power,
            batch_size,
            epochs,
            plateau,
            early_stop,
            output_dir: e.raw("output.dir").map(|(_, v)| PathBuf::from(v)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedules(&self) -> Result<SchedulePair> {
        let s = match self.schedule_kind {
            ScheduleKind::Plateau => Schedule::plateau_driven(self.start_lr)?,
            ScheduleKind::Constant => Schedule::constant(self.start_lr)?,
            ScheduleKind::PowerDecay => Schedule::power_decay(self.start_lr, self.power)?,
        };
        Ok(SchedulePair::same(s))
    }

    pub fn train_config(&self, method: Method) -> Result<TrainConfig> {
        Ok(TrainConfig {
            method,
            batch_size: self.batch_size,
            epochs: self.epochs,
            shared_epochs: self.shared_epochs,
            task_epochs: self.task_epochs,
            schedules: self.schedules()?,
            plateau: self.plateau,
            early_stop: self.early_stop,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds is empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("run.seeds contains duplicates".into()));
        }
        let mut methods = self.optimizers.clone();
        methods.sort_unstable();
        methods.dedup();
        if methods.is_empty() || methods.len() != self.optimizers.len() {
            return Err(Error::Config("optimizer.kind must list distinct optimizers".into()));
        }
        if let DataSource::Synthetic { n } = self.data {
            crate::data::split_sizes(n, self.split)?;
        }
        for &m in &self.optimizers {
            self.train_config(m)?.validate()?;
        }
        Ok(())
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self> {
        self.seeds = seeds;
        self.validate()?;
        Ok(self)
    }

    pub fn with_optimizers(mut self, optimizers: Vec<Method>) -> Result<Self> {
        self.optimizers = optimizers;
        self.validate()?;
        Ok(self)
    }
}
