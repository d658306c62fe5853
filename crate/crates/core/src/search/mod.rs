//! Exhaustive grid search over encoder and training hyperparameters.
//!
//! Each trial writes `trial-<index>.json` into the results directory; trials
//! whose file already exists are loaded instead of re-run.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_windows, DatasetTensor, WindowBatch, WindowMode};
use crate::nn::{Model, ModelConfig, Paraformer};
use crate::optim::{train, OptimizerKind, SchedulerKind, TrainConfig};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "PARAFORMER_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    #[serde(default = "default_layers")]
    pub n_layers: Vec<usize>,
    #[serde(default = "default_d_model")]
    pub d_model: Vec<usize>,
    #[serde(default = "default_heads")]
    pub n_heads: Vec<usize>,
    #[serde(default = "default_batch")]
    pub batch: Vec<usize>,
    #[serde(default = "default_optimizers")]
    pub optimizer: Vec<OptimizerKind>,
    #[serde(default = "default_schedulers")]
    pub scheduler: Vec<SchedulerKind>,
    /// Context lengths; absent means the settings' single window.
    #[serde(default)]
    pub window: Option<Vec<usize>>,
}

fn default_layers() -> Vec<usize> {
    vec![2, 4, 6, 8, 10, 12]
}

fn default_d_model() -> Vec<usize> {
    vec![64, 128, 256, 512]
}

fn default_heads() -> Vec<usize> {
    vec![4, 8]
}

fn default_batch() -> Vec<usize> {
    vec![64, 128, 256, 512]
}

fn default_optimizers() -> Vec<OptimizerKind> {
    OptimizerKind::ALL.to_vec()
}

fn default_schedulers() -> Vec<SchedulerKind> {
    vec![SchedulerKind::Cosine, SchedulerKind::Plateau]
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_layers: default_layers(),
            d_model: default_d_model(),
            n_heads: default_heads(),
            batch: default_batch(),
            optimizer: default_optimizers(),
            scheduler: default_schedulers(),
            window: None,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_layers", self.n_layers.len()),
            ("d_model", self.d_model.len()),
            ("n_heads", self.n_heads.len()),
            ("batch", self.batch.len()),
            ("optimizer", self.optimizer.len()),
            ("scheduler", self.scheduler.len()),
            ("window", self.window.as_ref().map_or(1, Vec::len)),
        ];
        if let Some((axis, _)) = sizes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::Config(format!("search axis {axis} is empty")));
        }
        let ints = [&self.n_layers, &self.d_model, &self.n_heads, &self.batch];
        if ints.iter().any(|axis| axis.contains(&0))
            || self.window.as_ref().is_some_and(|w| w.contains(&0))
        {
            return Err(Error::Config(
                "search axes must hold positive values".into(),
            ));
        }
        for &d in &self.d_model {
            if let Some(h) = self.n_heads.iter().find(|&&h| d % h != 0) {
                return Err(Error::Config(format!(
                    "d_model {d} is not divisible by {h} heads"
                )));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.n_layers.len()
            * self.d_model.len()
            * self.n_heads.len()
            * self.batch.len()
            * self.optimizer.len()
            * self.scheduler.len()
            * self.window.as_ref().map_or(1, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
    pub window: Option<usize>,
}

/// Cartesian product, last axis fastest, in the order layers, embedding,
/// heads, batch, optimizer, scheduler, window.
pub fn enumerate_grid(space: &SearchSpace) -> Result<Vec<TrialConfig>> {
    space.validate()?;
    let windows: Vec<Option<usize>> = match &space.window {
        Some(w) => w.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut out = Vec::with_capacity(space.size());
    for &n_layers in &space.n_layers {
        for &d_model in &space.d_model {
            for &n_heads in &space.n_heads {
                for &batch in &space.batch {
                    for &optimizer in &space.optimizer {
                        for &scheduler in &space.scheduler {
                            for &window in &windows {
                                out.push(TrialConfig {
                                    n_layers,
                                    d_model,
                                    n_heads,
                                    batch,
                                    optimizer,
                                    scheduler,
                                    window,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    /// Per-trial epoch cap.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub max_trials: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub window_mode: WindowMode,
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
}

fn default_epochs() -> usize {
    20
}

fn default_lr() -> f64 {
    1e-3
}

fn default_window() -> usize {
    5
}

fn default_divergence() -> f64 {
    10.0
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            max_trials: None,
            max_steps: None,
            lr: default_lr(),
            dropout: 0.0,
            window: default_window(),
            window_mode: WindowMode::default(),
            divergence_factor: default_divergence(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Done,
    Diverged,
    Skipped,
}

impl TrialStatus {
    pub fn name(self) -> &'static str {
        match self {
            TrialStatus::Done => "done",
            TrialStatus::Diverged => "diverged",
            TrialStatus::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub config: TrialConfig,
    /// `None` when no finite validation loss was reached.
    pub best_val_mse: Option<f64>,
    pub final_val_mse: Option<f64>,
    pub epochs: usize,
    pub seconds: f64,
    pub status: TrialStatus,
    #[serde(default)]
    pub note: Option<String>,
}

/// Normalized training and validation splits shared by all trials.
pub struct SearchData<'a> {
    pub train: &'a DatasetTensor,
    pub val: &'a DatasetTensor,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Trains one configuration; depends only on its inputs.
pub fn run_trial(
    index: usize,
    config: &TrialConfig,
    data: &SearchData,
    settings: &SearchSettings,
    seed: u64,
) -> Result<TrialResult> {
    let start = Instant::now();
    let window = config.window.unwrap_or(settings.window);
    let skipped = |note: String| TrialResult {
        index,
        config: config.clone(),
        best_val_mse: None,
        final_val_mse: None,
        epochs: 0,
        seconds: start.elapsed().as_secs_f64(),
        status: TrialStatus::Skipped,
        note: Some(note),
    };
    let windows = |d: &DatasetTensor| -> Result<WindowBatch> {
        make_windows(d, window, settings.window_mode)
    };
    let (train_w, val_w) = match (windows(data.train), windows(data.val)) {
        (Ok(t), Ok(v)) => (t, v),
        (Err(e), _) | (_, Err(e)) => return Ok(skipped(e.to_string())),
    };
    let model_cfg = ModelConfig {
        d_model: config.d_model,
        n_layers: config.n_layers,
        n_heads: config.n_heads,
        dropout: settings.dropout,
        window,
        ..ModelConfig::new(data.train.f_in(), data.train.f_out())
    };
    let mut model = Model::Paraformer(Paraformer::<f64>::new(model_cfg, seed)?);
    let mut tc = TrainConfig::new(settings.epochs, config.batch, settings.lr, seed)
        .with_optimizer(config.optimizer)
        .with_scheduler(config.scheduler);
    tc.max_steps = settings.max_steps;
    tc.divergence_factor = Some(settings.divergence_factor);
    let report = train(&mut model, &train_w, &val_w, &tc, |_| {})?;
    let status = if report.diverged() {
        TrialStatus::Diverged
    } else {
        TrialStatus::Done
    };
    Ok(TrialResult {
        index,
        config: config.clone(),
        best_val_mse: finite(report.best_val),
        final_val_mse: report.history.last().and_then(|e| finite(e.val_mse)),
        epochs: report.history.len(),
        seconds: start.elapsed().as_secs_f64(),
        status,
        note: match report.status {
            crate::optim::TrainStatus::Diverged { reason, .. } => Some(reason),
            crate::optim::TrainStatus::Completed => None,
        },
    })
}

pub fn trial_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("trial-{index}.json"))
}

fn write_trial(dir: &Path, r: &TrialResult) -> Result<()> {
    let path = trial_path(dir, r.index);
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(r)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn read_trial(dir: &Path, index: usize, config: &TrialConfig) -> Option<TrialResult> {
    let bytes = std::fs::read(trial_path(dir, index)).ok()?;
    let r: TrialResult = serde_json::from_slice(&bytes).ok()?;
    (r.index == index && &r.config == config).then_some(r)
}

/// Worker count from `PARAFORMER_THREADS`, else the available cores.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Outcome of a search: the sorted leaderboard and how many trials ran now.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub leaderboard: Vec<TrialResult>,
    pub executed: usize,
    pub resumed: usize,
}

/// Runs the first `max_trials` grid points (all when unset), reusing trial
/// files found in `results`.
pub fn run_search(
    space: &SearchSpace,
    data: &SearchData,
    settings: &SearchSettings,
    seed: u64,
    results: Option<&Path>,
) -> Result<SearchOutcome> {
    let grid = enumerate_grid(space)?;
    let budget = settings.max_trials.unwrap_or(grid.len());
    if budget == 0 || settings.epochs == 0 {
        return Err(Error::Config(
            "search budget must be at least one trial and one epoch".into(),
        ));
    }
    if let Some(dir) = results {
        std::fs::create_dir_all(dir)?;
    }
    let planned: Vec<(usize, TrialConfig)> = grid.into_iter().take(budget).enumerate().collect();
    let mut done: Vec<TrialResult> = Vec::new();
    let mut pending = Vec::new();
    for (i, cfg) in planned {
        match results.and_then(|dir| read_trial(dir, i, &cfg)) {
            Some(r) => done.push(r),
            None => pending.push((i, cfg)),
        }
    }
    let resumed = done.len();
    let executed = pending.len();

    let next = AtomicUsize::new(0);
    let collected = Mutex::new(Vec::with_capacity(pending.len()));
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..worker_count(pending.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, AtomicOrdering::Relaxed);
                let Some((i, cfg)) = pending.get(k) else {
                    break;
                };
                let outcome = run_trial(*i, cfg, data, settings, seed).and_then(|r| {
                    results
                        .map_or(Ok(()), |dir| write_trial(dir, &r))
                        .map(|_| r)
                });
                match outcome {
                    Ok(r) => collected.lock().expect("results lock").push(r),
                    Err(e) => {
                        failure.lock().expect("failure lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    done.extend(collected.into_inner().expect("results lock"));
    let leaderboard = rank(done);
    if !leaderboard.iter().any(|r| r.status == TrialStatus::Done) {
        return Err(Error::Empty("no trial completed".into()));
    }
    Ok(SearchOutcome {
        leaderboard,
        executed,
        resumed,
    })
}

/// Leaderboard order: done before diverged before skipped, then ascending
/// best validation MSE, then enumeration index.
pub fn compare(a: &TrialResult, b: &TrialResult) -> Ordering {
    let val = |r: &TrialResult| r.best_val_mse.unwrap_or(f64::INFINITY);
    a.status
        .cmp(&b.status)
        .then(val(a).total_cmp(&val(b)))
        .then(a.index.cmp(&b.index))
}

pub fn rank(mut results: Vec<TrialResult>) -> Vec<TrialResult> {
    results.sort_by(compare);
    results
}

pub fn select_best(leaderboard: &[TrialResult]) -> Result<&TrialResult> {
    leaderboard
        .iter()
        .filter(|r| r.status == TrialStatus::Done)
        .min_by(|a, b| compare(a, b))
        .ok_or_else(|| Error::Empty("no completed trial to select".into()))
}

pub fn write_leaderboard(path: &Path, leaderboard: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::metrics::csv_err)?;
    w.write_record([
        "rank",
        "index",
        "n_layers",
        "d_model",
        "n_heads",
        "batch",
        "optimizer",
        "scheduler",
        "window",
        "val_mse",
        "status",
        "epochs",
        "seconds",
    ])
    .map_err(crate::metrics::csv_err)?;
    for (rank, r) in leaderboard.iter().enumerate() {
        let c = &r.config;
        w.write_record([
            (rank + 1).to_string(),
            r.index.to_string(),
            c.n_layers.to_string(),
            c.d_model.to_string(),
            c.n_heads.to_string(),
            c.batch.to_string(),
            c.optimizer.name().to_string(),
            c.scheduler.name().to_string(),
            c.window.map(|w| w.to_string()).unwrap_or_default(),
            r.best_val_mse.map(|v| v.to_string()).unwrap_or_default(),
            r.status.name().to_string(),
            r.epochs.to_string(),
            format!("{:.3}", r.seconds),
        ])
        .map_err(crate::metrics::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_size_and_head() {
        let grid = enumerate_grid(&SearchSpace::default()).unwrap();
        assert_eq!(grid.len(), 1152);
        let first = &grid[0];
        assert_eq!(
            (first.n_layers, first.d_model, first.n_heads, first.batch),
            (2, 64, 4, 64)
        );
        assert_eq!(
            (first.optimizer, first.scheduler),
            (OptimizerKind::Sgd, SchedulerKind::Cosine)
        );
        assert_eq!(grid[1].scheduler, SchedulerKind::Plateau);
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        let mut s = SearchSpace::default();
        s.n_heads = vec![];
        assert!(enumerate_grid(&s).is_err());
        let s = SearchSpace {
            d_model: vec![66],
            ..SearchSpace::default()
        };
        assert!(enumerate_grid(&s).is_err());
    }

    fn result(index: usize, val: Option<f64>, status: TrialStatus) -> TrialResult {
        TrialResult {
            index,
            config: enumerate_grid(&SearchSpace::default()).unwrap()[index].clone(),
            best_val_mse: val,
            final_val_mse: val,
            epochs: 1,
            seconds: 0.0,
            status,
            note: None,
        }
    }

    #[test]
    fn ranking_rules() {
        let rs = vec![
            result(0, Some(0.5), TrialStatus::Diverged),
            result(1, Some(0.2), TrialStatus::Done),
            result(2, Some(0.1), TrialStatus::Done),
            result(3, Some(0.1), TrialStatus::Done),
            result(4, None, TrialStatus::Skipped),
        ];
        let order: Vec<usize> = rank(rs.clone()).iter().map(|r| r.index).collect();
        assert_eq!(order, vec![2, 3, 1, 0, 4]);
        assert_eq!(select_best(&rs).unwrap().index, 2);
        assert!(select_best(&rs[..1]).is_err());
    }
}
