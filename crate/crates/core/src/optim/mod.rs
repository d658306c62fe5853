//! Masked MSE, SGD/Adam/AdamW, plateau and cosine schedules, and the training loop.

mod loss;
mod optimizer;
mod scheduler;
mod train;

pub use loss::{masked_sse, mse_loss};
pub use optimizer::{Optimizer, OptimizerConfig, OptimizerKind};
pub use scheduler::{cosine_lr, Scheduler, SchedulerConfig, SchedulerKind};
pub use train::{
    evaluate_mse, predict_windows, train, EpochRecord, TrainConfig, TrainReport, TrainStatus,
};
