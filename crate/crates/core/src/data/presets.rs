//! Variable catalogs for the two ClimSim variable sets and helpers for
//! synthetic grids.
//!
//! Only shapes, names and units follow the real dataset. The per-level
//! energy factors use a fixed idealized pressure grid.

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, VariableSpec};

pub const N_LEVELS: usize = 60;
const GRAVITY: f64 = 9.806_65;
const CP_AIR: f64 = 1004.64;
const LATENT_VAP: f64 = 2.501e6;
const LATENT_FUSION: f64 = 3.337e5;
const RHO_WATER: f64 = 1000.0;
const SURFACE_PA: f64 = 1.0e5;

/// Shape preset for generated data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 124 inputs, 128 outputs.
    V1Small,
    /// 557 inputs, 368 outputs.
    V2Small,
    /// Scalar-only variables with the given widths.
    Custom { f_in: usize, f_out: usize },
}

impl Preset {
    pub fn parse(name: &str, f_in: Option<usize>, f_out: Option<usize>) -> Option<Self> {
        match name {
            "v1_small" | "v1" => Some(Preset::V1Small),
            "v2_small" | "v2" => Some(Preset::V2Small),
            "custom" => Some(Preset::Custom {
                f_in: f_in?,
                f_out: f_out?,
            }),
            _ => None,
        }
    }

    pub fn variables(&self) -> (Vec<VariableSpec>, Vec<VariableSpec>) {
        match *self {
            Preset::V1Small => (v1_inputs(), v1_outputs()),
            Preset::V2Small => (v2_inputs(), v2_outputs()),
            Preset::Custom { f_in, f_out } => (
                (0..f_in)
                    .map(|i| VariableSpec::new(&format!("x{i}"), 1, "1", vec![1.0]))
                    .collect(),
                (0..f_out)
                    .map(|i| VariableSpec::new(&format!("y{i}"), 1, "W/m2", vec![1.0]))
                    .collect(),
            ),
        }
    }
}

/// Layer thickness in Pa, level 0 at the top. Interfaces follow
/// `p_i = p_s·(i/60)^1.5`, so layers thicken toward the surface.
pub fn level_thickness_pa() -> Vec<f64> {
    let p = |i: usize| SURFACE_PA * (i as f64 / N_LEVELS as f64).powf(1.5);
    (0..N_LEVELS).map(|l| p(l + 1) - p(l)).collect()
}

fn column_mass() -> Vec<f64> {
    level_thickness_pa().iter().map(|dp| dp / GRAVITY).collect()
}

fn unit_scale(levels: usize) -> Vec<f64> {
    vec![1.0; levels]
}

fn profile(name: &str, unit: &str, factor: f64) -> VariableSpec {
    VariableSpec::new(
        name,
        N_LEVELS,
        unit,
        column_mass().iter().map(|m| m * factor).collect(),
    )
}

fn input_profile(name: &str, unit: &str) -> VariableSpec {
    VariableSpec::new(name, N_LEVELS, unit, unit_scale(N_LEVELS))
}

fn input_scalar(name: &str, unit: &str) -> VariableSpec {
    VariableSpec::new(name, 1, unit, vec![1.0])
}

fn flux(name: &str) -> VariableSpec {
    VariableSpec::new(name, 1, "W/m2", vec![1.0])
}

fn shared_outputs_tail() -> Vec<VariableSpec> {
    vec![
        flux("NETSW"),
        flux("FLWDS"),
        VariableSpec::new(
            "PRECSC",
            1,
            "m/s",
            vec![(LATENT_VAP + LATENT_FUSION) * RHO_WATER],
        ),
        VariableSpec::new("PRECC", 1, "m/s", vec![LATENT_VAP * RHO_WATER]),
        flux("SOLS"),
        flux("SOLL"),
        flux("SOLSD"),
        flux("SOLLD"),
    ]
}

fn surface_inputs() -> Vec<VariableSpec> {
    vec![
        input_scalar("PS", "Pa"),
        input_scalar("SOLIN", "W/m2"),
        input_scalar("LHFLX", "W/m2"),
        input_scalar("SHFLX", "W/m2"),
    ]
}

pub fn v1_inputs() -> Vec<VariableSpec> {
    let mut v = vec![input_profile("T", "K"), input_profile("Q", "kg/kg")];
    v.extend(surface_inputs());
    v
}

pub fn v1_outputs() -> Vec<VariableSpec> {
    let mut v = vec![
        profile("dT/dt", "K/s", CP_AIR),
        profile("dq/dt", "kg/kg/s", LATENT_VAP),
    ];
    v.extend(shared_outputs_tail());
    v
}

pub fn v2_inputs() -> Vec<VariableSpec> {
    let mut v = vec![
        input_profile("T", "K"),
        input_profile("Q", "kg/kg"),
        input_profile("CLDLIQ", "kg/kg"),
        input_profile("CLDICE", "kg/kg"),
        input_profile("U", "m/s"),
        input_profile("V", "m/s"),
        input_profile("O3", "mol/mol"),
        input_profile("CH4", "mol/mol"),
        input_profile("N2O", "mol/mol"),
    ];
    v.extend(surface_inputs());
    v.extend(
        [
            ("TAUX", "W/m2"),
            ("TAUY", "W/m2"),
            ("COSZRS", "1"),
            ("ALDIF", "1"),
            ("ALDIR", "1"),
            ("ASDIF", "1"),
            ("ASDIR", "1"),
            ("LWUP", "W/m2"),
            ("ICEFRAC", "1"),
            ("LANDFRAC", "1"),
            ("OCNFRAC", "1"),
            ("SNOWHICE", "m"),
            ("SNOWHLAND", "m"),
        ]
        .iter()
        .map(|(n, u)| input_scalar(n, u)),
    );
    v
}

pub fn v2_outputs() -> Vec<VariableSpec> {
    let mut v = vec![
        profile("dT/dt", "K/s", CP_AIR),
        profile("dq/dt", "kg/kg/s", LATENT_VAP),
        profile("dq_l/dt", "kg/kg/s", LATENT_VAP),
        profile("dq_i/dt", "kg/kg/s", LATENT_VAP + LATENT_FUSION),
        profile("du/dt", "m/s2", 1.0),
        profile("dv/dt", "m/s2", 1.0),
    ];
    v.extend(shared_outputs_tail());
    v
}

/// Near-uniform points on the sphere (Fibonacci lattice), `[lat, lon]` in
/// degrees with lon in `[0, 360)`.
pub fn fibonacci_grid(n: usize) -> Vec<[f64; 2]> {
    let golden_angle = 180.0 * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let lat = z.asin().to_degrees();
            let lon = (i as f64 * golden_angle).rem_euclid(360.0);
            [lat, lon]
        })
        .collect()
}

pub const DEFAULT_T0: &str = "0001-02-01T00:00:00";

pub fn preset_meta(preset: Preset, n_grid: usize, step_minutes: u32) -> DatasetMeta {
    let (in_vars, out_vars) = preset.variables();
    DatasetMeta {
        grid: fibonacci_grid(n_grid),
        in_vars,
        out_vars,
        t0: DEFAULT_T0.to_string(),
        step_minutes,
    }
}

pub fn custom_meta(n_grid: usize, f_in: usize, f_out: usize, step_minutes: u32) -> DatasetMeta {
    preset_meta(Preset::Custom { f_in, f_out }, n_grid, step_minutes)
}

#[cfg(test)]
mod tests {
    use super::super::total_levels;
    use super::*;

    #[test]
    fn preset_widths_match_catalogs() {
        let (i, o) = Preset::V1Small.variables();
        assert_eq!((total_levels(&i), total_levels(&o)), (124, 128));
        assert_eq!(o.len(), 10);
        let (i, o) = Preset::V2Small.variables();
        assert_eq!((total_levels(&i), total_levels(&o)), (557, 368));
        assert_eq!(o.len(), 14);
    }

    #[test]
    fn v1_output_order() {
        let names: Vec<String> = v1_outputs().into_iter().map(|v| v.name).collect();
        assert_eq!(
            names,
            [
                "dT/dt", "dq/dt", "NETSW", "FLWDS", "PRECSC", "PRECC", "SOLS", "SOLL", "SOLSD",
                "SOLLD"
            ]
        );
    }

    #[test]
    fn thickness_positive_and_sums_to_surface() {
        let dp = level_thickness_pa();
        assert!(dp.iter().all(|&v| v > 0.0));
        assert!(dp[0] < dp[59]);
        assert!((dp.iter().sum::<f64>() - SURFACE_PA).abs() < 1e-6);
    }

    #[test]
    fn grid_in_range() {
        for [lat, lon] in fibonacci_grid(384) {
            assert!((-90.0..=90.0).contains(&lat));
            assert!((0.0..360.0).contains(&lon));
        }
    }
}
