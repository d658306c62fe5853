//! Evaluation metrics in common energy units.
//!
//! Undefined R² values (constant truth) are `None` rather than a number, so
//! averages can skip them and count how many were skipped.

mod report;
pub mod svg;

pub use report::{
    build_report, file_safe, ChannelMetrics, MetricReport, ReportOptions, ScatterRef, SpatialMap,
    VariableReport, ZonalGrid,
};

use crate::data::{DatasetMeta, VariableSpec};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Below this, sums of squares count as zero.
pub const SS_FLOOR: f64 = 1e-12;
pub const DEFAULT_LAT_BINS: usize = 24;
pub const DEFAULT_SCATTER_BINS: usize = 80;

/// Multiplies each channel of row-major `[N, C]` values by its scale.
pub fn convert_units(values: &[f64], scale: &[f64]) -> Result<Vec<f64>> {
    if scale.is_empty() || !values.len().is_multiple_of(scale.len()) {
        return Err(Error::Contract(format!(
            "{} values do not split into rows of {} channels",
            values.len(),
            scale.len()
        )));
    }
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Contract("unit scales must be positive".into()));
    }
    Ok(values
        .chunks_exact(scale.len())
        .flat_map(|row| row.iter().zip(scale).map(|(v, s)| v * s))
        .collect())
}

fn check_pair(pred: &[f64], truth: &[f64], min: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metrics", &[pred.len()], &[truth.len()]));
    }
    if truth.len() < min {
        return Err(Error::Contract(format!(
            "need at least {min} samples, got {}",
            truth.len()
        )));
    }
    Ok(())
}

/// `(mae, rmse)`.
pub fn pointwise_metrics(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check_pair(pred, truth, 1)?;
    let n = truth.len() as f64;
    let (abs, sq) = pred.iter().zip(truth).fold((0.0, 0.0), |(a, s), (p, t)| {
        let d = p - t;
        (a + d.abs(), s + d * d)
    });
    Ok((abs / n, (sq / n).sqrt()))
}

/// Coefficient of determination; `None` when the truth is constant and the
/// prediction is not exact.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth, 2)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let (res, tot) = pred.iter().zip(truth).fold((0.0, 0.0), |(r, s), (p, t)| {
        (r + (t - p) * (t - p), s + (t - mean) * (t - mean))
    });
    Ok(r2_from_sums(res, tot))
}

pub(crate) fn r2_from_sums(ss_res: f64, ss_tot: f64) -> Option<f64> {
    if ss_tot < SS_FLOOR {
        (ss_res < SS_FLOOR).then_some(1.0)
    } else {
        Some(1.0 - ss_res / ss_tot)
    }
}

/// Mean over defined values and the number of undefined ones skipped.
pub fn mean_defined(values: &[Option<f64>]) -> (Option<f64>, usize) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = values.len() - defined.len();
    if defined.is_empty() {
        (None, skipped)
    } else {
        (
            Some(defined.iter().sum::<f64>() / defined.len() as f64),
            skipped,
        )
    }
}

/// Values of channel `c` from row-major `[N, width]` data.
pub fn column(values: &[f64], width: usize, c: usize) -> Vec<f64> {
    values.chunks_exact(width).map(|row| row[c]).collect()
}

/// Channel range of output variable `var`.
pub fn variable_channels(vars: &[VariableSpec], var: usize) -> Result<std::ops::Range<usize>> {
    let v = vars
        .get(var)
        .ok_or_else(|| Error::Contract(format!("no output variable {var}")))?;
    let start: usize = vars[..var].iter().map(|v| v.levels).sum();
    Ok(start..start + v.levels)
}

/// Per-level metrics of a profile variable across all samples, level 0 first.
pub fn level_profile(
    pred: &[f64],
    truth: &[f64],
    vars: &[VariableSpec],
    var: usize,
) -> Result<Vec<ChannelMetrics>> {
    let range = variable_channels(vars, var)?;
    if !vars[var].is_profile() {
        return Err(Error::Contract(format!(
            "{} is a scalar variable, not a profile",
            vars[var].name
        )));
    }
    let width: usize = vars.iter().map(|v| v.levels).sum();
    check_pair(pred, truth, width)?;
    range
        .map(|c| ChannelMetrics::compute(&column(pred, width, c), &column(truth, width, c)))
        .collect()
}

/// Uniform latitude bins over [-90, 90] with each grid cell's bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatBinning {
    pub n_bins: usize,
    pub edges: Vec<f64>,
    pub assignment: Vec<usize>,
}

impl LatBinning {
    pub fn new(n_bins: usize, lats: &[f64]) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::Config("need at least one latitude bin".into()));
        }
        let width = 180.0 / n_bins as f64;
        let edges = (0..=n_bins).map(|i| -90.0 + i as f64 * width).collect();
        let assignment = lats
            .iter()
            .map(|&lat| {
                if !(-90.0..=90.0).contains(&lat) {
                    return Err(Error::Contract(format!("latitude {lat} out of range")));
                }
                Ok((((lat + 90.0) / width) as usize).min(n_bins - 1))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n_bins,
            edges,
            assignment,
        })
    }

    pub fn from_meta(n_bins: usize, meta: &DatasetMeta) -> Result<Self> {
        let lats: Vec<f64> = meta.grid.iter().map(|p| p[0]).collect();
        Self::new(n_bins, &lats)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }
}

/// Daily-mean, zonal-mean R² for a block of channels: `[n_bins][channels]`.
///
/// Days are consecutive blocks of `steps_per_day` time indices counted from
/// zero; only days whose every step has at least one sample are used.
pub fn zonal_daily_r2(
    pred: &[f64],
    truth: &[f64],
    provenance: &[(usize, usize)],
    width: usize,
    channels: std::ops::Range<usize>,
    binning: &LatBinning,
    steps_per_day: usize,
) -> Result<Vec<Vec<Option<f64>>>> {
    if steps_per_day == 0 {
        return Err(Error::Contract("steps_per_day must be at least 1".into()));
    }
    if width == 0 || channels.end > width {
        return Err(Error::Contract(format!(
            "channels {channels:?} outside width {width}"
        )));
    }
    check_pair(pred, truth, provenance.len() * width)?;
    if pred.len() != provenance.len() * width {
        return Err(Error::shape(
            "zonal_daily_r2",
            &[pred.len()],
            &[provenance.len(), width],
        ));
    }
    if let Some(&(_, g)) = provenance
        .iter()
        .find(|(_, g)| *g >= binning.assignment.len())
    {
        return Err(Error::Contract(format!("grid {g} has no latitude bin")));
    }
    let n_days = provenance
        .iter()
        .map(|(t, _)| t / steps_per_day + 1)
        .max()
        .unwrap_or(0);
    let mut seen = vec![vec![false; steps_per_day]; n_days];
    for &(t, _) in provenance {
        seen[t / steps_per_day][t % steps_per_day] = true;
    }
    let days: Vec<usize> = (0..n_days)
        .filter(|&d| seen[d].iter().all(|&s| s))
        .collect();
    if days.len() < 2 {
        return Err(Error::Contract(format!(
            "zonal daily means need 2 complete days, found {}",
            days.len()
        )));
    }
    let mut day_slot = vec![usize::MAX; n_days];
    for (slot, &d) in days.iter().enumerate() {
        day_slot[d] = slot;
    }
    let n_ch = channels.len();
    let nb = binning.n_bins;
    let nd = days.len();
    let mut sum_p = vec![0.0; nb * nd * n_ch];
    let mut sum_t = vec![0.0; nb * nd * n_ch];
    let mut count = vec![0usize; nb * nd];
    for (i, &(t, g)) in provenance.iter().enumerate() {
        let slot = day_slot[t / steps_per_day];
        if slot == usize::MAX {
            continue;
        }
        let cell = binning.assignment[g] * nd + slot;
        count[cell] += 1;
        let row = i * width;
        for (k, c) in channels.clone().enumerate() {
            sum_p[cell * n_ch + k] += pred[row + c];
            sum_t[cell * n_ch + k] += truth[row + c];
        }
    }
    let mut out = vec![vec![None; n_ch]; nb];
    for (b, row) in out.iter_mut().enumerate() {
        if (0..nd).any(|s| count[b * nd + s] == 0) {
            continue;
        }
        for (k, cell) in row.iter_mut().enumerate() {
            let series = |sums: &[f64]| -> Vec<f64> {
                (0..nd)
                    .map(|s| sums[(b * nd + s) * n_ch + k] / count[b * nd + s] as f64)
                    .collect()
            };
            *cell = r_squared(&series(&sum_p), &series(&sum_t))?;
        }
    }
    Ok(out)
}

/// Per-grid R² across time for channel `c`; grids with fewer than two samples
/// are undefined.
pub fn spatial_r2_map(
    pred: &[f64],
    truth: &[f64],
    provenance: &[(usize, usize)],
    width: usize,
    c: usize,
    n_grid: usize,
) -> Result<Vec<Option<f64>>> {
    if c >= width || pred.len() != provenance.len() * width {
        return Err(Error::shape(
            "spatial_r2_map",
            &[pred.len()],
            &[provenance.len(), width],
        ));
    }
    check_pair(pred, truth, 0)?;
    let mut per_grid: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_grid];
    for (i, &(_, g)) in provenance.iter().enumerate() {
        let slot = per_grid
            .get_mut(g)
            .ok_or_else(|| Error::Contract(format!("grid {g} outside {n_grid} cells")))?;
        slot.0.push(pred[i * width + c]);
        slot.1.push(truth[i * width + c]);
    }
    per_grid
        .iter()
        .map(|(p, t)| {
            if t.len() < 2 {
                Ok(None)
            } else {
                r_squared(p, t)
            }
        })
        .collect()
}

/// Square 2-D histogram of (truth, pred) over a shared axis range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterDensity {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    /// Row-major `[truth bin][pred bin]`.
    pub counts: Vec<u64>,
}

impl ScatterDensity {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of points on the diagonal bins.
    pub fn diagonal_fraction(&self) -> f64 {
        let diag: u64 = (0..self.bins).map(|i| self.counts[i * self.bins + i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_x_center", "bin_y_center", "count"])
            .map_err(csv_err)?;
        for i in 0..self.bins {
            for j in 0..self.bins {
                let n = self.counts[i * self.bins + j];
                if n > 0 {
                    w.write_record([
                        self.center(i).to_string(),
                        self.center(j).to_string(),
                        n.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Density of `(truth, pred)` pairs on a `bins × bins` grid; x is truth.
pub fn scatter_export(pred: &[f64], truth: &[f64], bins: usize) -> Result<ScatterDensity> {
    check_pair(pred, truth, 0)?;
    if bins == 0 {
        return Err(Error::Config("scatter needs at least one bin".into()));
    }
    let finite = pred.iter().chain(truth).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo > hi {
        (lo, hi) = (0.0, 0.0);
    }
    if hi - lo < SS_FLOOR {
        lo -= 0.5;
        hi += 0.5;
    }
    let scale = bins as f64 / (hi - lo);
    let index = |v: f64| (((v - lo) * scale).max(0.0) as usize).min(bins - 1);
    let mut counts = vec![0u64; bins * bins];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[index(t) * bins + index(p)] += 1;
    }
    Ok(ScatterDensity {
        bins,
        lo,
        hi,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        let (mae, rmse) = pointwise_metrics(&[3.0, -4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(mae, 3.5);
        assert!((rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(convert_units(&[4.0], &[2.5]).unwrap(), vec![10.0]);
        assert!(pointwise_metrics(&[], &[]).is_err());
    }

    #[test]
    fn r_squared_reference_points() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r_squared(&t, &t).unwrap(), Some(1.0));
        let m = [3.5; 4];
        assert!(r_squared(&m, &t).unwrap().unwrap().abs() < 1e-12);
        assert_eq!(r_squared(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), None);
        assert_eq!(r_squared(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), Some(1.0));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn lat_bins_cover_poles() {
        let b = LatBinning::new(24, &[-90.0, 0.0, 89.9, 90.0]).unwrap();
        assert_eq!(b.assignment, vec![0, 12, 23, 23]);
        assert_eq!(b.edges.len(), 25);
        assert!(LatBinning::new(4, &[91.0]).is_err());
    }

    #[test]
    fn scatter_of_equal_points_is_one_bin() {
        let s = scatter_export(&[2.0; 7], &[2.0; 7], 80).unwrap();
        assert_eq!(s.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(s.total(), 7);
    }
}
