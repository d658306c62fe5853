//! Run configuration. Every section rejects unknown keys so typos surface as
//! usage errors instead of silently falling back to defaults.

use serde::{Deserialize, Serialize};

use paraformer::data::{WindowMode, PAPER_SPLIT};
use paraformer::metrics::ReportOptions;
use paraformer::nn::{Activation, MlpConfig, ModelConfig, ModelKind};
use paraformer::optim::{
    OptimizerConfig, OptimizerKind, SchedulerConfig, SchedulerKind, TrainConfig,
};
use paraformer::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub window: usize,
    pub mlp_hidden: Vec<usize>,
    pub mlp_activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelConfig::new(1, 1);
        let m = MlpConfig::new(1, 1);
        Self {
            kind: ModelKind::Paraformer,
            d_model: p.d_model,
            n_layers: p.n_layers,
            n_heads: p.n_heads,
            ffn_mult: p.ffn_mult,
            dropout: p.dropout,
            window: p.window,
            mlp_hidden: m.hidden_widths,
            mlp_activation: m.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub patience: usize,
    pub factor: f64,
    pub eta_min: f64,
    /// `None` uses the optimizer's default.
    pub weight_decay: Option<f64>,
    pub clip_norm: Option<f64>,
    pub max_steps: Option<usize>,
    pub divergence_factor: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = SchedulerConfig::plateau();
        Self {
            epochs: 200,
            lr: 1e-4,
            batch: 512,
            optimizer: OptimizerKind::AdamW,
            scheduler: SchedulerKind::Plateau,
            seed: 0,
            patience: s.patience,
            factor: s.factor,
            eta_min: s.eta_min,
            weight_decay: None,
            clip_norm: None,
            max_steps: None,
            divergence_factor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<String>,
    pub stride: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub window_mode: WindowMode,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            stride: 1,
            train_frac: PAPER_SPLIT.0,
            val_frac: PAPER_SPLIT.1,
            window_mode: WindowMode::NonOverlapping,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub lat_bins: usize,
    pub scatter_bins: usize,
    pub map_levels: Vec<usize>,
    pub report: Option<String>,
    pub svg_dir: Option<String>,
    pub batch: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let r = ReportOptions::default();
        Self {
            lat_bins: r.lat_bins,
            scatter_bins: r.scatter_bins,
            map_levels: r.map_levels,
            report: None,
            svg_dir: None,
            batch: 1024,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.stride == 0 {
            return Err(Error::Config("data.stride must be positive".into()));
        }
        if self.model.window == 0 {
            return Err(Error::Config("model.window must be positive".into()));
        }
        self.train_config().validate()?;
        self.paraformer_config(1, 1).validate()?;
        self.mlp_config(1, 1).validate()
    }

    /// Context length actually fed to the model: MLPs see single steps.
    pub fn effective_window(&self) -> usize {
        match self.model.kind {
            ModelKind::Paraformer => self.model.window,
            ModelKind::Mlp => 1,
        }
    }

    pub fn paraformer_config(&self, f_in: usize, f_out: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            ffn_mult: m.ffn_mult,
            dropout: m.dropout,
            window: m.window,
            ..ModelConfig::new(f_in, f_out)
        }
    }

    pub fn mlp_config(&self, f_in: usize, f_out: usize) -> MlpConfig {
        MlpConfig {
            hidden_widths: self.model.mlp_hidden.clone(),
            activation: self.model.mlp_activation,
            ..MlpConfig::new(f_in, f_out)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let mut optimizer = OptimizerConfig::new(t.optimizer, t.lr);
        if let Some(wd) = t.weight_decay {
            optimizer.weight_decay = wd;
        }
        TrainConfig {
            optimizer,
            scheduler: SchedulerConfig {
                kind: t.scheduler,
                patience: t.patience,
                factor: t.factor,
                eta_min: t.eta_min,
                t_max: t.epochs.max(1),
                ..SchedulerConfig::plateau()
            },
            max_steps: t.max_steps,
            clip_norm: t.clip_norm,
            divergence_factor: t.divergence_factor,
            eval_batch: self.eval.batch,
            ..TrainConfig::new(t.epochs, t.batch, t.lr, t.seed)
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            lat_bins: self.eval.lat_bins,
            scatter_bins: self.eval.scatter_bins,
            map_levels: self.eval.map_levels.clone(),
        }
    }
}
