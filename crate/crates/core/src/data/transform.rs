//! Temporal subsampling and chronological splits.

use super::DatasetTensor;
use crate::error::{Error, Result};

/// Train and validation fractions of the default 7/1/2 chronological layout.
pub const PAPER_SPLIT: (f64, f64) = (0.7, 0.1);

/// Keeps `t = 0, stride, 2·stride, ...` and stretches the time step accordingly.
pub fn temporal_subsample(d: &DatasetTensor, stride: usize) -> Result<DatasetTensor> {
    if stride == 0 {
        return Err(Error::Config(
            "subsampling stride must be at least 1".into(),
        ));
    }
    if stride == 1 {
        return Ok(d.clone());
    }
    if stride >= d.n_time() {
        return Err(Error::Empty(format!(
            "stride {stride} leaves a single step of a {}-step series",
            d.n_time()
        )));
    }
    let times: Vec<usize> = (0..d.n_time()).step_by(stride).collect();
    let mut out = d.select_times(&times)?;
    out.meta.step_minutes = u32::try_from(stride)
        .ok()
        .and_then(|s| d.meta.step_minutes.checked_mul(s))
        .ok_or_else(|| {
            Error::Config(format!(
                "step of {} min × {stride} overflows",
                d.meta.step_minutes
            ))
        })?;
    Ok(out)
}

/// Contiguous `(train, val, test)` blocks in chronological order.
pub fn split_by_time(
    d: &DatasetTensor,
    train_frac: f64,
    val_frac: f64,
) -> Result<(DatasetTensor, DatasetTensor, DatasetTensor)> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac <= 1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "split fractions ({train_frac}, {val_frac}) must be positive with sum <= 1"
        )));
    }
    let t = d.n_time();
    let n_train = (t as f64 * train_frac + 1e-9).floor() as usize;
    let n_val = (t as f64 * val_frac + 1e-9).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= t {
        return Err(Error::Config(format!(
            "split ({train_frac}, {val_frac}) of {t} steps leaves an empty block"
        )));
    }
    Ok((
        d.slice_time(0, n_train)?,
        d.slice_time(n_train, n_train + n_val)?,
        d.slice_time(n_train + n_val, t)?,
    ))
}

/// Steps per (possibly partial) day: `⌈1440 / step_minutes⌉`.
pub fn steps_per_day(step_minutes: u32) -> usize {
    1440usize.div_ceil(step_minutes.max(1) as usize)
}
