//! Per-channel z-score normalization with statistics from the training split.

use serde::{Deserialize, Serialize};

use super::DatasetTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channels whose standard deviation falls below this are treated as constant.
pub const CONSTANT_STD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub fn is_constant(&self) -> bool {
        self.std < CONSTANT_STD
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        if self.is_constant() {
            self.mean
        } else {
            z * self.std + self.mean
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub inputs: Vec<ChannelStats>,
    pub targets: Vec<ChannelStats>,
}

impl NormStats {
    pub fn constant_inputs(&self) -> Vec<usize> {
        constant_channels(&self.inputs)
    }

    pub fn constant_targets(&self) -> Vec<usize> {
        constant_channels(&self.targets)
    }

    fn check(&self, d: &DatasetTensor) -> Result<()> {
        if self.inputs.len() != d.f_in() || self.targets.len() != d.f_out() {
            return Err(Error::Contract(format!(
                "normalization stats cover ({}, {}) channels, dataset has ({}, {})",
                self.inputs.len(),
                self.targets.len(),
                d.f_in(),
                d.f_out()
            )));
        }
        Ok(())
    }
}

fn constant_channels(stats: &[ChannelStats]) -> Vec<usize> {
    stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_constant())
        .map(|(i, _)| i)
        .collect()
}

fn channel_stats(values: &[f32], width: usize) -> Vec<ChannelStats> {
    let n = (values.len() / width) as f64;
    let mut mean = vec![0.0f64; width];
    for row in values.chunks_exact(width) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; width];
    for row in values.chunks_exact(width) {
        for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    mean.into_iter()
        .zip(var)
        .map(|(mean, ss)| ChannelStats {
            mean,
            std: (ss / n).sqrt(),
        })
        .collect()
}

/// Population mean and standard deviation per channel over all `(t, g)`.
pub fn compute_norm_stats(train: &DatasetTensor) -> NormStats {
    NormStats {
        inputs: channel_stats(train.inputs(), train.f_in()),
        targets: channel_stats(train.targets(), train.f_out()),
    }
}

fn apply(
    values: &[f32],
    stats: &[ChannelStats],
    f: impl Fn(&ChannelStats, f64) -> f64,
) -> Vec<f32> {
    values
        .chunks_exact(stats.len())
        .flat_map(|row| row.iter().zip(stats).map(|(&v, s)| f(s, v as f64) as f32))
        .collect()
}

pub fn normalize(d: &DatasetTensor, stats: &NormStats) -> Result<DatasetTensor> {
    stats.check(d)?;
    Ok(d.with_values(
        apply(d.inputs(), &stats.inputs, ChannelStats::normalize),
        apply(d.targets(), &stats.targets, ChannelStats::normalize),
    ))
}

/// Maps normalized predictions (last axis = output channels) back to native units.
pub fn denormalize<T: Scalar>(pred: &Tensor<T>, stats: &NormStats) -> Result<Tensor<T>> {
    let width = pred.last_dim();
    if width != stats.targets.len() {
        return Err(Error::Contract(format!(
            "prediction has {width} channels, stats cover {}",
            stats.targets.len()
        )));
    }
    let data = pred
        .data()
        .chunks_exact(width)
        .flat_map(|row| {
            row.iter()
                .zip(&stats.targets)
                .map(|(&z, s)| T::lit(s.denormalize(z.to_f64_lossy())))
        })
        .collect();
    Tensor::new(pred.shape(), data)
}
