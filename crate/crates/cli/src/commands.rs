use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;

use paraformer::checkpoint::Checkpoint;
use paraformer::data::{
    compute_norm_stats, generate_synthetic, normalize, read_dataset, split_by_time,
    temporal_subsample, write_dataset, Preset, SyntheticSpec, WindowMode, PAPER_SPLIT,
};
use paraformer::optim::{train, TrainStatus};
use paraformer::search::{run_search, write_leaderboard, SearchData, SearchSettings, SearchSpace};
use paraformer::{Error, Model};

use crate::config::RunConfig;
use crate::pipeline::{self, CheckpointHeader, Split};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Format(_) => CliError::Io(e.to_string()),
            Error::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_context(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => other.into(),
    }
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "v1_small")]
    pub preset: String,
    #[arg(long, default_value_t = 2048)]
    pub t: usize,
    #[arg(long, default_value_t = 16)]
    pub g: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub step_minutes: Option<u32>,
    /// Input width for the custom preset.
    #[arg(long)]
    pub f_in: Option<usize>,
    /// Output width for the custom preset.
    #[arg(long)]
    pub f_out: Option<usize>,
}

pub fn cmd_gen(a: &GenArgs) -> CliResult<String> {
    let preset = Preset::parse(&a.preset, a.f_in, a.f_out).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown preset {:?} (custom needs --f-in and --f-out)",
            a.preset
        ))
    })?;
    let mut spec = SyntheticSpec::new(preset, a.t, a.g, a.seed).with_memory(a.alpha, a.rho);
    if let Some(b) = a.beta {
        spec.beta = b;
    }
    if let Some(n) = a.noise {
        spec.noise_std = n;
    }
    if let Some(s) = a.step_minutes {
        spec.step_minutes = s;
    }
    let d = generate_synthetic(&spec)?;
    write_dataset(&d, &a.out).map_err(io_context(&a.out))?;
    Ok(format!(
        "wrote {}: T={} G={} f_in={} f_out={} step={}min",
        a.out.display(),
        d.n_time(),
        d.n_grid(),
        d.f_in(),
        d.f_out(),
        d.meta.step_minutes
    ))
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok(RunConfig::from_json(&text)?)
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// JSON-lines epoch log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub config: RunConfig,
    pub best_val_mse: f64,
    pub epochs: usize,
}

/// Trains per the config, printing the resolved config first; writes the
/// best-validation checkpoint.
pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<TrainOutcome> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.data.path = Some(a.data.display().to_string());
    writeln!(
        out,
        "resolved config: {}",
        serde_json::to_string(&cfg).expect("config serializes")
    )?;
    let d = read_dataset(&a.data).map_err(io_context(&a.data))?;
    let prepared = pipeline::prepare(&d, &cfg, None)?;
    let train_w = pipeline::windows(prepared.norm(Split::Train), &cfg)?;
    let val_w = pipeline::windows(prepared.norm(Split::Val), &cfg)?;
    let mut model = pipeline::build_model(&cfg, d.f_in(), d.f_out())?;
    writeln!(
        out,
        "{:?}: {} parameters, {} train / {} val sequences",
        model.kind(),
        model.param_count(),
        train_w.n_seq(),
        val_w.n_seq()
    )?;

    let mut log: Option<BufWriter<File>> = match &a.log {
        Some(p) => {
            Some(BufWriter::new(File::create(p).map_err(|e| {
                CliError::Io(format!("{}: {e}", p.display()))
            })?))
        }
        None => None,
    };
    let mut log_error = None;
    let report = train(&mut model, &train_w, &val_w, &cfg.train_config(), |e| {
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(e).expect("record serializes");
            if let Err(err) = writeln!(w, "{line}") {
                log_error.get_or_insert(err);
            }
        }
        let _ = writeln!(
            out,
            "epoch {:>4}  lr {:.3e}  train {:.4e}  val {:.4e}  {:.1}s",
            e.epoch, e.lr, e.train_mse, e.val_mse, e.seconds
        );
    })?;
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    if let Some(e) = log_error {
        return Err(e.into());
    }
    if let TrainStatus::Diverged { epoch, reason } = &report.status {
        return Err(CliError::Numeric(format!(
            "training diverged at epoch {epoch}: {reason}"
        )));
    }
    let header = CheckpointHeader {
        config: cfg.clone(),
        f_in: d.f_in(),
        f_out: d.f_out(),
        norm: prepared.stats.clone(),
        out_vars: d.meta.out_vars.iter().map(|v| v.name.clone()).collect(),
        best_val_mse: report.best_val,
        best_epoch: report.best_epoch,
    };
    let ckpt = Checkpoint::from_model(
        serde_json::to_value(&header).expect("header serializes"),
        &model,
    );
    ckpt.write(&a.out_ckpt).map_err(io_context(&a.out_ckpt))?;
    writeln!(
        out,
        "best val mse {:.4e} at epoch {}; checkpoint {}",
        report.best_val,
        report.best_epoch,
        a.out_ckpt.display()
    )?;
    Ok(TrainOutcome {
        config: cfg,
        best_val_mse: report.best_val,
        epochs: report.history.len(),
    })
}

/// Reads a checkpoint and rebuilds its model.
pub fn load_checkpoint(path: &Path) -> CliResult<(CheckpointHeader, Model)> {
    let ckpt = Checkpoint::read(path).map_err(io_context(path))?;
    let header: CheckpointHeader = serde_json::from_value(ckpt.header.clone())
        .map_err(|e| CliError::Io(format!("{}: bad checkpoint header: {e}", path.display())))?;
    let mut model = pipeline::build_model(&header.config, header.f_in, header.f_out)?;
    ckpt.load_into(&mut model)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((header, model))
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// report.json path; CSVs are written next to it.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub svg_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<paraformer::metrics::MetricReport> {
    let (header, model) = load_checkpoint(&a.ckpt)?;
    let d = read_dataset(&a.data).map_err(io_context(&a.data))?;
    pipeline::check_widths(&model, &d)?;
    let cfg = &header.config;
    let prepared = pipeline::prepare(&d, cfg, Some(header.norm.clone()))?;
    let report = pipeline::report(&model, cfg, &prepared, a.split)?;

    let report_path = a
        .report
        .clone()
        .or_else(|| cfg.eval.report.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("report.json"));
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    report
        .write_json(&report_path)
        .map_err(io_context(&report_path))?;
    let csv_dir = report_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    report
        .write_csvs(&csv_dir, &d.meta)
        .map_err(io_context(&csv_dir))?;
    let svg_dir = a
        .svg_dir
        .clone()
        .or_else(|| cfg.eval.svg_dir.as_ref().map(PathBuf::from));
    if let Some(dir) = &svg_dir {
        report.write_svgs(dir, &d.meta).map_err(io_context(dir))?;
    }
    write!(out, "{}", report.table())?;
    for note in &report.notes {
        writeln!(out, "note: {note}")?;
    }
    writeln!(
        out,
        "report {} ({} samples, {} undefined R² skipped)",
        report_path.display(),
        report.n_samples,
        report.skipped
    )?;
    Ok(report)
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON axis overrides.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Maximum number of trials, taken in enumeration order.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-trial epoch cap.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "nonoverlap")]
    pub window_mode: WindowModeArg,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum WindowModeArg {
    Nonoverlap,
    Sliding,
}

impl From<WindowModeArg> for WindowMode {
    fn from(m: WindowModeArg) -> Self {
        match m {
            WindowModeArg::Nonoverlap => WindowMode::NonOverlapping,
            WindowModeArg::Sliding => WindowMode::Sliding,
        }
    }
}

pub fn cmd_search(
    a: &SearchArgs,
    out: &mut dyn Write,
) -> CliResult<paraformer::search::SearchOutcome> {
    let space = match &a.space {
        None => SearchSpace::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            if text.trim().is_empty() {
                return Err(CliError::Usage(format!(
                    "{}: empty search space",
                    p.display()
                )));
            }
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
    };
    if a.budget == Some(0) {
        return Err(CliError::Usage("--budget must be at least 1".into()));
    }
    let d = read_dataset(&a.data).map_err(io_context(&a.data))?;
    let d = temporal_subsample(&d, a.stride)?;
    let (train, val, _) = split_by_time(&d, PAPER_SPLIT.0, PAPER_SPLIT.1)?;
    let stats = compute_norm_stats(&train);
    let (train, val) = (normalize(&train, &stats)?, normalize(&val, &stats)?);
    let settings = SearchSettings {
        epochs: a.epochs,
        max_trials: a.budget,
        max_steps: a.max_steps,
        lr: a.lr,
        window: a.window,
        window_mode: a.window_mode.into(),
        ..SearchSettings::default()
    };
    let data = SearchData {
        train: &train,
        val: &val,
    };
    let outcome = run_search(&space, &data, &settings, a.seed, Some(&a.results))?;
    let board = a.results.join("leaderboard.csv");
    write_leaderboard(&board, &outcome.leaderboard).map_err(io_context(&board))?;
    writeln!(
        out,
        "{} trials run, {} resumed",
        outcome.executed, outcome.resumed
    )?;
    writeln!(
        out,
        "{:>4} {:>6} {:>7} {:>5} {:>5} {:>9} {:>9} {:>6} {:>12} {:>9}",
        "rank",
        "layers",
        "d_model",
        "heads",
        "batch",
        "optimizer",
        "scheduler",
        "window",
        "val_mse",
        "status"
    )?;
    for (i, r) in outcome.leaderboard.iter().enumerate() {
        let c = &r.config;
        writeln!(
            out,
            "{:>4} {:>6} {:>7} {:>5} {:>5} {:>9} {:>9} {:>6} {:>12} {:>9}",
            i + 1,
            c.n_layers,
            c.d_model,
            c.n_heads,
            c.batch,
            c.optimizer.name(),
            c.scheduler.name(),
            c.window.unwrap_or(settings.window),
            r.best_val_mse.map_or("-".into(), |v| format!("{v:.4e}")),
            r.status.name()
        )?;
    }
    writeln!(out, "leaderboard {}", board.display())?;
    Ok(outcome)
}
