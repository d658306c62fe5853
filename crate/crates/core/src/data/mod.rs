//! Gridded time-series datasets: schema, binary I/O, temporal subsampling,
//! chronological splits, normalization, windowing and synthetic generation.

mod io;
mod norm;
pub mod presets;
mod synthetic;
mod transform;
mod window;

pub use io::{
    read_dataset, read_dataset_bytes, sidecar_path, write_dataset, write_dataset_bytes, MAGIC,
    VERSION,
};
pub use norm::{compute_norm_stats, denormalize, normalize, ChannelStats, NormStats, CONSTANT_STD};
pub use presets::Preset;
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use transform::{split_by_time, steps_per_day, temporal_subsample, PAPER_SPLIT};
pub use window::{
    make_nonoverlapping_windows, make_sliding_windows, make_windows, WindowBatch, WindowMode,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named variable; profile variables span `levels` consecutive channels
/// ordered from the top of the atmosphere down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub levels: usize,
    pub unit: String,
    /// Per-level factor converting native units to W/m².
    pub energy_scale: Vec<f64>,
}

impl VariableSpec {
    pub fn new(name: &str, levels: usize, unit: &str, energy_scale: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            levels,
            unit: unit.to_string(),
            energy_scale,
        }
    }

    pub fn is_profile(&self) -> bool {
        self.levels > 1
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config(format!(
                "variable {} has zero levels",
                self.name
            )));
        }
        if self.energy_scale.len() != self.levels {
            return Err(Error::Config(format!(
                "variable {}: {} energy scales for {} levels",
                self.name,
                self.energy_scale.len(),
                self.levels
            )));
        }
        if self
            .energy_scale
            .iter()
            .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config(format!(
                "variable {}: energy scales must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// Channel width of a variable list.
pub fn total_levels(vars: &[VariableSpec]) -> usize {
    vars.iter().map(|v| v.levels).sum()
}

/// `(variable, first channel)` for each variable, in order.
pub fn channel_offsets(vars: &[VariableSpec]) -> Vec<usize> {
    vars.iter()
        .scan(0, |acc, v| {
            let start = *acc;
            *acc += v.levels;
            Some(start)
        })
        .collect()
}

/// Per-channel energy scales, concatenated over variables.
pub fn channel_scales(vars: &[VariableSpec]) -> Vec<f64> {
    vars.iter()
        .flat_map(|v| v.energy_scale.iter().copied())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// `[lat_deg, lon_deg]` per grid cell.
    pub grid: Vec<[f64; 2]>,
    pub in_vars: Vec<VariableSpec>,
    pub out_vars: Vec<VariableSpec>,
    pub t0: String,
    pub step_minutes: u32,
}

impl DatasetMeta {
    pub fn lat(&self, g: usize) -> f64 {
        self.grid[g][0]
    }

    pub fn validate(&self, n_grid: usize, f_in: usize, f_out: usize) -> Result<()> {
        if self.grid.len() != n_grid {
            return Err(Error::Config(format!(
                "metadata lists {} grid cells, data has {n_grid}",
                self.grid.len()
            )));
        }
        for (g, &[lat, lon]) in self.grid.iter().enumerate() {
            if !(-90.0..=90.0).contains(&lat) || !(0.0..360.0).contains(&lon) {
                return Err(Error::Config(format!(
                    "grid cell {g} has invalid coordinates ({lat}, {lon})"
                )));
            }
        }
        for v in self.in_vars.iter().chain(&self.out_vars) {
            v.validate()?;
        }
        if total_levels(&self.in_vars) != f_in || total_levels(&self.out_vars) != f_out {
            return Err(Error::Config(format!(
                "variable levels sum to ({}, {}), data has ({f_in}, {f_out}) channels",
                total_levels(&self.in_vars),
                total_levels(&self.out_vars)
            )));
        }
        if self.step_minutes == 0 {
            return Err(Error::Config("step_minutes must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs `[T, G, f_in]` and targets `[T, G, f_out]` in 32-bit storage.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTensor {
    n_time: usize,
    n_grid: usize,
    f_in: usize,
    f_out: usize,
    inputs: Vec<f32>,
    targets: Vec<f32>,
    pub meta: DatasetMeta,
}

impl DatasetTensor {
    pub fn new(
        n_time: usize,
        n_grid: usize,
        inputs: Vec<f32>,
        targets: Vec<f32>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if n_time == 0 || n_grid == 0 {
            return Err(Error::Empty("dataset needs T >= 1 and G >= 1".into()));
        }
        let f_in = total_levels(&meta.in_vars);
        let f_out = total_levels(&meta.out_vars);
        meta.validate(n_grid, f_in, f_out)?;
        if inputs.len() != n_time * n_grid * f_in || targets.len() != n_time * n_grid * f_out {
            return Err(Error::Contract(format!(
                "array lengths ({}, {}) do not match T={n_time} G={n_grid} f_in={f_in} f_out={f_out}",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(i) = inputs.iter().chain(&targets).position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite dataset value at element {i}"
            )));
        }
        Ok(Self {
            n_time,
            n_grid,
            f_in,
            f_out,
            inputs,
            targets,
            meta,
        })
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn f_in(&self) -> usize {
        self.f_in
    }

    pub fn f_out(&self) -> usize {
        self.f_out
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn input(&self, t: usize, g: usize) -> &[f32] {
        let start = (t * self.n_grid + g) * self.f_in;
        &self.inputs[start..start + self.f_in]
    }

    pub fn target(&self, t: usize, g: usize) -> &[f32] {
        let start = (t * self.n_grid + g) * self.f_out;
        &self.targets[start..start + self.f_out]
    }

    /// Time steps `[start, end)` as a new dataset.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_time {
            return Err(Error::Empty(format!(
                "time slice [{start}, {end}) of a {}-step dataset",
                self.n_time
            )));
        }
        let (gi, go) = (self.n_grid * self.f_in, self.n_grid * self.f_out);
        Ok(Self {
            n_time: end - start,
            inputs: self.inputs[start * gi..end * gi].to_vec(),
            targets: self.targets[start * go..end * go].to_vec(),
            ..self.clone_header()
        })
    }

    /// Keeps the listed time indices, in the given order.
    pub fn select_times(&self, times: &[usize]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Empty("no time steps selected".into()));
        }
        let (gi, go) = (self.n_grid * self.f_in, self.n_grid * self.f_out);
        let mut inputs = Vec::with_capacity(times.len() * gi);
        let mut targets = Vec::with_capacity(times.len() * go);
        for &t in times {
            if t >= self.n_time {
                return Err(Error::Contract(format!("time index {t} out of range")));
            }
            inputs.extend_from_slice(&self.inputs[t * gi..(t + 1) * gi]);
            targets.extend_from_slice(&self.targets[t * go..(t + 1) * go]);
        }
        Ok(Self {
            n_time: times.len(),
            inputs,
            targets,
            ..self.clone_header()
        })
    }

    pub(crate) fn with_values(&self, inputs: Vec<f32>, targets: Vec<f32>) -> Self {
        Self {
            inputs,
            targets,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            n_time: self.n_time,
            n_grid: self.n_grid,
            f_in: self.f_in,
            f_out: self.f_out,
            inputs: Vec::new(),
            targets: Vec::new(),
            meta: self.meta.clone(),
        }
    }
}
