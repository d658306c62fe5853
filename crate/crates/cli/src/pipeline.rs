//! Dataset preparation, model construction and evaluation shared by the
//! commands.

use serde::{Deserialize, Serialize};

use paraformer::data::{
    compute_norm_stats, denormalize, make_windows, normalize, split_by_time, temporal_subsample,
    DatasetTensor, NormStats, WindowBatch,
};
use paraformer::metrics::{build_report, MetricReport};
use paraformer::nn::{Mlp, ModelKind, Paraformer};
use paraformer::{Error, Model, Result, Tensor};

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Chronological splits in native units plus their normalized copies.
pub struct Prepared {
    pub raw: [DatasetTensor; 3],
    pub norm: [DatasetTensor; 3],
    pub stats: NormStats,
}

impl Prepared {
    pub fn raw(&self, s: Split) -> &DatasetTensor {
        &self.raw[s as usize]
    }

    pub fn norm(&self, s: Split) -> &DatasetTensor {
        &self.norm[s as usize]
    }
}

/// Subsamples, splits, and normalizes with training statistics (or the given
/// ones, when evaluating a checkpoint).
pub fn prepare(d: &DatasetTensor, cfg: &RunConfig, stats: Option<NormStats>) -> Result<Prepared> {
    let d = temporal_subsample(d, cfg.data.stride)?;
    let (train, val, test) = split_by_time(&d, cfg.data.train_frac, cfg.data.val_frac)?;
    let stats = stats.unwrap_or_else(|| compute_norm_stats(&train));
    let norm = [
        normalize(&train, &stats)?,
        normalize(&val, &stats)?,
        normalize(&test, &stats)?,
    ];
    Ok(Prepared {
        raw: [train, val, test],
        norm,
        stats,
    })
}

/// Model inputs for one split: windows of the configured length, flattened to
/// single steps for the MLP so both models see the same scored samples.
pub fn windows(d: &DatasetTensor, cfg: &RunConfig) -> Result<WindowBatch> {
    let w = make_windows(d, cfg.model.window, cfg.data.window_mode)?;
    Ok(match cfg.model.kind {
        ModelKind::Paraformer => w,
        ModelKind::Mlp => w.flatten_scored(),
    })
}

pub fn build_model(cfg: &RunConfig, f_in: usize, f_out: usize) -> Result<Model> {
    Ok(match cfg.model.kind {
        ModelKind::Paraformer => Model::Paraformer(Paraformer::new(
            cfg.paraformer_config(f_in, f_out),
            cfg.train.seed,
        )?),
        ModelKind::Mlp => Model::Mlp(Mlp::new(cfg.mlp_config(f_in, f_out), cfg.train.seed)?),
    })
}

/// Everything needed to rebuild and apply a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: RunConfig,
    pub f_in: usize,
    pub f_out: usize,
    pub norm: NormStats,
    pub out_vars: Vec<String>,
    pub best_val_mse: f64,
    pub best_epoch: usize,
}

/// Native-unit predictions and truth for the scored positions, row-major
/// `[N, f_out]`, with each row's `(t, g)`.
pub struct Predictions {
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    pub provenance: Vec<(usize, usize)>,
}

pub fn predict_split(
    model: &Model,
    w: &WindowBatch,
    raw: &DatasetTensor,
    stats: &NormStats,
    batch: usize,
) -> Result<Predictions> {
    let f_out = w.f_out();
    let p = paraformer::optim::predict_windows(model, w, batch)?;
    let rows = Tensor::new(&[w.n_seq() * w.len(), f_out], p.data().to_vec())?;
    let native = denormalize(&rows, stats)?;
    let mut out = Predictions {
        pred: Vec::with_capacity(w.n_scored() * f_out),
        truth: Vec::with_capacity(w.n_scored() * f_out),
        provenance: Vec::with_capacity(w.n_scored()),
    };
    for (seq, pos, t, g) in w.scored() {
        let row = seq * w.len() + pos;
        out.pred
            .extend_from_slice(&native.data()[row * f_out..(row + 1) * f_out]);
        out.truth.extend(raw.target(t, g).iter().map(|&v| v as f64));
        out.provenance.push((t, g));
    }
    Ok(out)
}

pub fn report(
    model: &Model,
    cfg: &RunConfig,
    prepared: &Prepared,
    split: Split,
) -> Result<MetricReport> {
    let w = windows(prepared.norm(split), cfg)?;
    let raw = prepared.raw(split);
    let p = predict_split(model, &w, raw, &prepared.stats, cfg.eval.batch)?;
    build_report(
        &p.pred,
        &p.truth,
        &p.provenance,
        &raw.meta,
        &cfg.report_options(),
    )
}

pub fn check_widths(model: &Model, d: &DatasetTensor) -> Result<()> {
    if model.f_in() != d.f_in() || model.f_out() != d.f_out() {
        return Err(Error::Config(format!(
            "checkpoint expects {} inputs and {} outputs, dataset has {} and {}",
            model.f_in(),
            model.f_out(),
            d.f_in(),
            d.f_out()
        )));
    }
    Ok(())
}
