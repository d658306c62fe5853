use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    column, convert_units, csv_err, level_profile, mean_defined, pointwise_metrics, r_squared,
    scatter_export, spatial_r2_map, svg, variable_channels, zonal_daily_r2, LatBinning,
    ScatterDensity, DEFAULT_LAT_BINS, DEFAULT_SCATTER_BINS,
};
use crate::data::{channel_scales, steps_per_day, DatasetMeta};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

impl ChannelMetrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let (mae, rmse) = pointwise_metrics(pred, truth)?;
        let r2 = if truth.len() < 2 {
            None
        } else {
            r_squared(pred, truth)?
        };
        Ok(Self { mae, rmse, r2 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportOptions {
    #[serde(default = "default_lat_bins")]
    pub lat_bins: usize,
    #[serde(default = "default_scatter_bins")]
    pub scatter_bins: usize,
    /// Levels of profile variables exported as spatial maps and scatters.
    #[serde(default = "default_map_levels")]
    pub map_levels: Vec<usize>,
}

fn default_lat_bins() -> usize {
    DEFAULT_LAT_BINS
}

fn default_scatter_bins() -> usize {
    DEFAULT_SCATTER_BINS
}

fn default_map_levels() -> Vec<usize> {
    vec![1, 25, 40, 59]
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            lat_bins: DEFAULT_LAT_BINS,
            scatter_bins: DEFAULT_SCATTER_BINS,
            map_levels: default_map_levels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZonalGrid {
    pub lat_centers: Vec<f64>,
    /// `[lat bin][level]`.
    pub r2: Vec<Vec<Option<f64>>>,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialMap {
    pub level: Option<usize>,
    pub r2: Vec<Option<f64>>,
    pub mean_r2: Option<f64>,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRef {
    pub variable: String,
    pub level: Option<usize>,
    pub file: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub name: String,
    pub unit: String,
    pub levels: usize,
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub per_level: Option<Vec<ChannelMetrics>>,
    pub mean_level_r2: Option<f64>,
    pub zonal: Option<ZonalGrid>,
    pub spatial: Vec<SpatialMap>,
    /// Undefined R² values left out of this variable's averages.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub steps_per_day: usize,
    pub options: ReportOptions,
    pub variables: Vec<VariableReport>,
    pub scatter: Vec<ScatterRef>,
    pub skipped: usize,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub densities: Vec<ScatterDensity>,
}

/// File-name-safe form of a variable name: `dT/dt` becomes `dT_dt`.
pub fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn file_stem(name: &str, level: Option<usize>) -> String {
    match level {
        Some(l) => format!("{}_L{l:02}", file_safe(name)),
        None => file_safe(name),
    }
}

/// Full report from native-unit predictions and truth (`[N, f_out]` rows,
/// one `(t, g)` per row); everything is converted to energy units first.
pub fn build_report(
    pred: &[f64],
    truth: &[f64],
    provenance: &[(usize, usize)],
    meta: &DatasetMeta,
    opts: &ReportOptions,
) -> Result<MetricReport> {
    let scales = channel_scales(&meta.out_vars);
    let width = scales.len();
    if pred.len() != truth.len() || pred.len() != provenance.len() * width {
        return Err(Error::shape(
            "build_report",
            &[pred.len(), truth.len()],
            &[provenance.len(), width],
        ));
    }
    if provenance.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let pred = convert_units(pred, &scales)?;
    let truth = convert_units(truth, &scales)?;
    let binning = LatBinning::from_meta(opts.lat_bins, meta)?;
    let spd = steps_per_day(meta.step_minutes);
    let n_grid = meta.grid.len();
    let mut notes = Vec::new();
    let mut variables = Vec::with_capacity(meta.out_vars.len());
    let mut scatter = Vec::new();
    let mut densities = Vec::new();

    for (vi, var) in meta.out_vars.iter().enumerate() {
        let range = variable_channels(&meta.out_vars, vi)?;
        let pooled = |v: &[f64]| -> Vec<f64> {
            v.chunks_exact(width)
                .flat_map(|row| row[range.clone()].iter().copied())
                .collect()
        };
        let (vp, vt) = (pooled(&pred), pooled(&truth));
        let global = ChannelMetrics::compute(&vp, &vt)?;
        let mut skipped = usize::from(global.r2.is_none());

        let mut per_level = None;
        let mut mean_level_r2 = None;
        let mut zonal = None;
        let mut map_channels: Vec<(Option<usize>, usize)> = Vec::new();
        if var.is_profile() {
            let levels = level_profile(&pred, &truth, &meta.out_vars, vi)?;
            let r2s: Vec<Option<f64>> = levels.iter().map(|m| m.r2).collect();
            let (mean, sk) = mean_defined(&r2s);
            mean_level_r2 = mean;
            skipped += sk;
            per_level = Some(levels);
            match zonal_daily_r2(
                &pred,
                &truth,
                provenance,
                width,
                range.clone(),
                &binning,
                spd,
            ) {
                Ok(grid) => {
                    let sk = grid.iter().flatten().filter(|v| v.is_none()).count();
                    skipped += sk;
                    zonal = Some(ZonalGrid {
                        lat_centers: binning.centers(),
                        r2: grid,
                        skipped: sk,
                    });
                }
                Err(Error::Contract(msg)) => {
                    notes.push(format!("{}: zonal grid omitted, {msg}", var.name))
                }
                Err(e) => return Err(e),
            }
            for &l in opts.map_levels.iter().filter(|&&l| l < var.levels) {
                map_channels.push((Some(l), range.start + l));
            }
        } else {
            map_channels.push((None, range.start));
        }

        let mut spatial = Vec::new();
        for &(level, c) in &map_channels {
            let r2 = spatial_r2_map(&pred, &truth, provenance, width, c, n_grid)?;
            let (mean_r2, sk) = mean_defined(&r2);
            skipped += sk;
            spatial.push(SpatialMap {
                level,
                r2,
                mean_r2,
                skipped: sk,
            });
            let density = scatter_export(
                &column(&pred, width, c),
                &column(&truth, width, c),
                opts.scatter_bins,
            )?;
            scatter.push(ScatterRef {
                variable: var.name.clone(),
                level,
                file: format!("scatter_{}.csv", file_stem(&var.name, level)),
                count: density.total(),
            });
            densities.push(density);
        }

        variables.push(VariableReport {
            name: var.name.clone(),
            unit: "W/m2".into(),
            levels: var.levels,
            mae: global.mae,
            rmse: global.rmse,
            r2: global.r2,
            per_level,
            mean_level_r2,
            zonal,
            spatial,
            skipped,
        });
    }
    let skipped = variables.iter().map(|v| v.skipped).sum();
    Ok(MetricReport {
        n_samples: provenance.len(),
        steps_per_day: spd,
        options: opts.clone(),
        variables,
        scatter,
        skipped,
        notes,
        densities,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

impl MetricReport {
    pub fn variable(&self, name: &str) -> Option<&VariableReport> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(create(path)?, self)?;
        Ok(())
    }

    /// Per-level, zonal, spatial and scatter CSVs; returns the files written.
    pub fn write_csvs(&self, dir: &Path, meta: &DatasetMeta) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();

        let path = dir.join("level_profiles.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["variable", "level", "mae", "rmse", "r2"])
            .map_err(csv_err)?;
        for v in &self.variables {
            for (l, m) in v.per_level.iter().flatten().enumerate() {
                w.write_record([
                    v.name.clone(),
                    l.to_string(),
                    m.mae.to_string(),
                    m.rmse.to_string(),
                    fmt_opt(m.r2),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        written.push(path);

        for v in &self.variables {
            if let Some(z) = &v.zonal {
                let path = dir.join(format!("zonal_{}.csv", file_safe(&v.name)));
                let mut w = csv::Writer::from_writer(create(&path)?);
                w.write_record(["lat_center", "level", "r2"])
                    .map_err(csv_err)?;
                for (lat, row) in z.lat_centers.iter().zip(&z.r2) {
                    for (l, r) in row.iter().enumerate() {
                        w.write_record([lat.to_string(), l.to_string(), fmt_opt(*r)])
                            .map_err(csv_err)?;
                    }
                }
                w.flush()?;
                written.push(path);
            }
            for map in &v.spatial {
                let path = dir.join(format!("spatial_{}.csv", file_stem(&v.name, map.level)));
                let mut w = csv::Writer::from_writer(create(&path)?);
                w.write_record(["grid", "lat", "lon", "r2"])
                    .map_err(csv_err)?;
                for (g, (r, p)) in map.r2.iter().zip(&meta.grid).enumerate() {
                    w.write_record([
                        g.to_string(),
                        p[0].to_string(),
                        p[1].to_string(),
                        fmt_opt(*r),
                    ])
                    .map_err(csv_err)?;
                }
                w.flush()?;
                written.push(path);
            }
        }
        for (r, d) in self.scatter.iter().zip(&self.densities) {
            let path = dir.join(&r.file);
            d.write_csv(create(&path)?)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Profile line charts, zonal heatmaps and spatial maps.
    pub fn write_svgs(&self, dir: &Path, meta: &DatasetMeta) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut emit = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        for v in &self.variables {
            if let Some(levels) = &v.per_level {
                emit(
                    format!("profile_{}.svg", file_safe(&v.name)),
                    svg::level_profile_chart(&v.name, levels),
                )?;
            }
            if let Some(z) = &v.zonal {
                emit(
                    format!("zonal_{}.svg", file_safe(&v.name)),
                    svg::zonal_heatmap(&v.name, z),
                )?;
            }
            for map in &v.spatial {
                let title = match map.level {
                    Some(l) => format!("{} level {l}", v.name),
                    None => v.name.clone(),
                };
                emit(
                    format!("map_{}.svg", file_stem(&v.name, map.level)),
                    svg::spatial_map(&title, &meta.grid, &map.r2),
                )?;
            }
        }
        Ok(written)
    }

    /// Plain-text table: Variable | MAE | RMSE | R².
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>12} {:>12} {:>10}\n",
            "Variable", "MAE", "RMSE", "R²"
        );
        for v in &self.variables {
            let r2 = v.r2.map_or("n/a".to_string(), |r| format!("{r:.3}"));
            out.push_str(&format!(
                "{:<10} {:>12.4} {:>12.4} {:>10}\n",
                v.name, v.mae, v.rmse, r2
            ));
        }
        out
    }
}
