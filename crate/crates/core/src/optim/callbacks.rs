//! Epoch-end callbacks monitoring the validation aggregate loss: learning-rate
//! reduction on plateaus and early stopping with best-weight restoration.
//! Both follow the Keras update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 50,
            factor: 0.75,
            min_delta: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 350,
            min_delta: 0.0,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || !(self.factor > 0.0 && self.factor < 1.0) || !(self.min_delta >= 0.0) {
            return Err(Error::Config(format!(
                "plateau callback needs patience >= 1, factor in (0,1), min_delta >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || !(self.min_delta >= 0.0) {
            return Err(Error::Config(format!(
                "early stopping needs patience >= 1 and min_delta >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReduceOnPlateau {
    pub config: PlateauConfig,
    pub best: f64,
    pub wait: usize,
}

impl ReduceOnPlateau {
    pub fn new(config: PlateauConfig) -> Self {
        Self {
            config,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Feeds one epoch's monitored value; returns the new rate when it drops.
    pub fn update(&mut self, monitored: f64, rate: f64) -> Option<f64> {
        if monitored < self.best - self.config.min_delta {
            self.best = monitored;
            self.wait = 0;
            return None;
        }
        self.wait += 1;
        if self.wait >= self.config.patience {
            self.wait = 0;
            return Some(rate * self.config.factor);
        }
        None
    }
}

#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub config: EarlyStopConfig,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub best_params: Option<ParamVector>,
    pub wait: usize,
}

impl EarlyStopping {
    pub fn new(config: EarlyStopConfig) -> Self {
        Self {
            config,
            best: f64::INFINITY,
            best_epoch: None,
            best_params: None,
            wait: 0,
        }
    }

    /// Feeds one epoch's monitored value; returns `true` when training must stop.
    pub fn update(&mut self, epoch: usize, monitored: f64, params: &ParamVector) -> bool {
        self.wait += 1;
        if monitored - self.config.min_delta < self.best {
            self.best = monitored;
            self.best_epoch = Some(epoch);
            self.best_params = Some(params.clone());
            self.wait = 0;
            return false;
        }
        self.wait >= self.config.patience && epoch > 0
    }
}
