use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Cosine,
    Plateau,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 2] = [SchedulerKind::Cosine, SchedulerKind::Plateau];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Cosine => "cosine",
            SchedulerKind::Plateau => "plateau",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
    /// Cosine period in epochs.
    pub t_max: usize,
    pub eta_min: f64,
}

impl SchedulerConfig {
    pub fn plateau() -> Self {
        Self {
            kind: SchedulerKind::Plateau,
            patience: 10,
            factor: 0.5,
            threshold: 1e-8,
            t_max: 200,
            eta_min: 0.0,
        }
    }

    pub fn cosine(t_max: usize) -> Self {
        Self {
            kind: SchedulerKind::Cosine,
            t_max,
            ..Self::plateau()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) || self.t_max == 0 || self.eta_min < 0.0 {
            return Err(Error::Config(format!(
                "invalid scheduler settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// `η_min + (base − η_min)·(1 + cos(π·e/T_max))/2`, held at `η_min` past `T_max`.
pub fn cosine_lr(base_lr: f64, eta_min: f64, t_max: usize, epoch: usize) -> f64 {
    let e = epoch.min(t_max) as f64;
    eta_min + (base_lr - eta_min) * (1.0 + (std::f64::consts::PI * e / t_max as f64).cos()) / 2.0
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    base_lr: f64,
    lr: f64,
    best: f64,
    since_best: usize,
    epoch: usize,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig, base_lr: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            base_lr,
            lr: base_lr,
            best: f64::INFINITY,
            since_best: 0,
            epoch: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Advances one epoch given its validation loss; returns the next learning rate.
    pub fn epoch_end(&mut self, val_metric: f64) -> f64 {
        self.epoch += 1;
        let c = &self.config;
        match c.kind {
            SchedulerKind::Plateau => {
                if val_metric < self.best - c.threshold {
                    self.best = val_metric;
                    self.since_best = 0;
                } else {
                    self.since_best += 1;
                }
                if self.since_best > c.patience {
                    self.lr *= c.factor;
                    self.since_best = 0;
                }
            }
            SchedulerKind::Cosine => {
                self.lr = cosine_lr(self.base_lr, c.eta_min, c.t_max, self.epoch);
            }
        }
        self.lr
    }
}
