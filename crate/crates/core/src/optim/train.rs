use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{masked_sse, mse_loss};
use super::optimizer::{Optimizer, OptimizerConfig, OptimizerKind};
use super::scheduler::{Scheduler, SchedulerConfig, SchedulerKind};
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Dropout draws use streams offset by this, shuffles use the epoch index.
const DROPOUT_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub scheduler: SchedulerConfig,
    pub max_steps: Option<usize>,
    pub clip_norm: Option<f64>,
    /// Stop as diverged once validation MSE exceeds this multiple of its initial value.
    pub divergence_factor: Option<f64>,
    pub eval_batch: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch,
            seed,
            optimizer: OptimizerConfig::new(OptimizerKind::AdamW, lr),
            scheduler: SchedulerConfig {
                t_max: epochs.max(1),
                ..SchedulerConfig::plateau()
            },
            max_steps: None,
            clip_norm: None,
            divergence_factor: None,
            eval_batch: 1024,
        }
    }

    pub fn with_optimizer(mut self, kind: OptimizerKind) -> Self {
        let lr = self.optimizer.lr;
        self.optimizer = OptimizerConfig::new(kind, lr);
        self
    }

    pub fn with_scheduler(mut self, kind: SchedulerKind) -> Self {
        self.scheduler.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.eval_batch == 0 {
            return Err(Error::Config(
                "epochs and batch sizes must be positive".into(),
            ));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.optimizer.validate()?;
        self.scheduler.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub initial_val: f64,
    pub best_val: f64,
    /// Zero when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub steps: usize,
    pub status: TrainStatus,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        matches!(self.status, TrainStatus::Diverged { .. })
    }
}

/// Masked MSE of the model over every sequence of `data`, in evaluation mode.
pub fn evaluate_mse<T: Scalar>(
    model: &Model<T>,
    data: &WindowBatch,
    eval_batch: usize,
) -> Result<f64> {
    let mut sse = 0.0;
    let mut n = 0;
    let all: Vec<usize> = (0..data.n_seq()).collect();
    for chunk in all.chunks(eval_batch.max(1)) {
        let (x, y, mask) = data.gather::<T>(chunk)?;
        let pred = model.predict(&x)?;
        let (s, c) = masked_sse(&pred, &y, &mask)?;
        sse += s;
        n += c;
    }
    if n == 0 {
        return Err(Error::Empty("no scored positions".into()));
    }
    Ok(sse / n as f64)
}

/// Evaluation-mode predictions `[n_seq, len, f_out]` for all sequences.
pub fn predict_windows<T: Scalar>(
    model: &Model<T>,
    data: &WindowBatch,
    eval_batch: usize,
) -> Result<Tensor<T>> {
    let all: Vec<usize> = (0..data.n_seq()).collect();
    let mut out = Vec::with_capacity(data.n_seq() * data.len() * data.f_out());
    for chunk in all.chunks(eval_batch.max(1)) {
        let (x, _, _) = data.gather::<T>(chunk)?;
        out.extend_from_slice(model.predict(&x)?.data());
    }
    Tensor::new(&[data.n_seq(), data.len(), data.f_out()], out)
}

fn snapshot<T: Scalar>(model: &Model<T>) -> Vec<Vec<T>> {
    model
        .parameters()
        .iter()
        .map(|(_, t)| t.data().to_vec())
        .collect()
}

fn restore<T: Scalar>(model: &mut Model<T>, saved: &[Vec<T>]) {
    for (p, s) in model.parameters_mut().into_iter().zip(saved) {
        p.data_mut().copy_from_slice(s);
    }
}

fn clip<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// One optimizer step on the listed sequences; returns the batch loss.
fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Optimizer<T>,
    data: &WindowBatch,
    seqs: &[usize],
    clip_norm: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (x, y, mask) = data.gather::<T>(seqs)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (pred, params) = model.forward(&mut tape, xv, true, rng)?;
    let loss = mse_loss(&mut tape, pred, &y, &mask)?;
    let value = tape.value(loss).item()?.to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("training loss became {value}")));
    }
    tape.backward(loss)?;
    let mut grads: Vec<Vec<T>> = params
        .iter()
        .map(|&p| {
            tape.take_grad(p)
                .unwrap_or_else(|| vec![T::zero(); tape.value(p).numel()])
        })
        .collect();
    if let Some(c) = clip_norm {
        clip(&mut grads, c);
    }
    opt.step(&mut model.parameters_mut(), &grads)?;
    Ok(value)
}

/// Epoch loop with seeded shuffling and best-validation retention. On return
/// the model holds the parameters of the best validation epoch (or the initial
/// ones if none improved); divergence is reported in the status, not as an error.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_data: &WindowBatch,
    val_data: &WindowBatch,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Empty(
            "training and validation windows must be nonempty".into(),
        ));
    }
    for d in [train_data, val_data] {
        if d.f_in() != model.f_in() || d.f_out() != model.f_out() {
            return Err(Error::Contract(format!(
                "data widths ({}, {}) do not match model ({}, {})",
                d.f_in(),
                d.f_out(),
                model.f_in(),
                model.f_out()
            )));
        }
    }
    let mut opt = Optimizer::new(config.optimizer.clone())?;
    let mut sched = Scheduler::new(config.scheduler.clone(), config.optimizer.lr)?;
    let initial_val = evaluate_mse(model, val_data, config.eval_batch)?;
    let mut best = snapshot(model);
    let mut report = TrainReport {
        history: Vec::new(),
        initial_val,
        best_val: initial_val,
        best_epoch: 0,
        steps: 0,
        status: TrainStatus::Completed,
    };
    let mut order: Vec<usize> = (0..train_data.n_seq()).collect();

    'epochs: for epoch in 1..=config.epochs {
        let start = Instant::now();
        let lr = opt.lr();
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle.set_stream(epoch as u64);
        order.shuffle(&mut shuffle);
        let mut dropout = ChaCha8Rng::seed_from_u64(config.seed);
        dropout.set_stream(DROPOUT_STREAM + epoch as u64);

        let (mut loss_sum, mut weight) = (0.0, 0.0);
        let mut stop = false;
        for batch in order.chunks(config.batch) {
            match train_step(
                model,
                &mut opt,
                train_data,
                batch,
                config.clip_norm,
                &mut dropout,
            ) {
                Ok(l) => {
                    loss_sum += l * batch.len() as f64;
                    weight += batch.len() as f64;
                }
                Err(Error::Numeric(reason)) => {
                    report.status = TrainStatus::Diverged { epoch, reason };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            report.steps += 1;
            if config.max_steps.is_some_and(|m| report.steps >= m) {
                stop = true;
                break;
            }
        }
        let val_mse = evaluate_mse(model, val_data, config.eval_batch)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_mse: loss_sum / weight,
            val_mse,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        report.history.push(record);
        if !val_mse.is_finite() {
            report.status = TrainStatus::Diverged {
                epoch,
                reason: format!("validation MSE became {val_mse}"),
            };
            break;
        }
        if config
            .divergence_factor
            .is_some_and(|f| val_mse > f * initial_val)
        {
            report.status = TrainStatus::Diverged {
                epoch,
                reason: format!("validation MSE {val_mse:.4e} exceeds the initial {initial_val:.4e} by the divergence factor"),
            };
            break;
        }
        if val_mse < report.best_val {
            report.best_val = val_mse;
            report.best_epoch = epoch;
            best = snapshot(model);
        }
        opt.set_lr(sched.epoch_end(val_mse));
        if stop {
            break;
        }
    }
    restore(model, &best);
    Ok(report)
}
