//! Synthetic ClimSim-shaped data with a tunable dependence on past inputs.
//!
//! Per grid cell, a k-dimensional latent state `u_t` (iid in time plus a slow
//! annual cycle scaled by latitude) drives inputs through level-smooth
//! loadings `U`: `x_t = U u_t + n_t`. With `r_t = Uᵀ x_t`, targets in energy
//! units are
//!
//! `y_t = tanh(A r_t) + α (B r_{t−2} + C r_{t−4}) + β D z_t + ε_t`
//!
//! where `z_t` is a unit-variance AR(1) latent with persistence `ρ` that never
//! reaches the inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::presets::{preset_meta, Preset};
use super::{channel_scales, DatasetTensor, VariableSpec};
use crate::error::{Error, Result};

const N_FACTORS: usize = 8;
const N_HIDDEN: usize = 4;
const INPUT_NOISE_VAR: f64 = 0.1;
const SEASONAL_AMPLITUDE: f64 = 0.5;
const TANH_ARG_STD: f64 = 0.5;
const LAG_STD: f64 = 2.0;
const MAX_LAG: usize = 4;
const MINUTES_PER_YEAR: f64 = 365.0 * 1440.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub preset: Preset,
    pub n_time: usize,
    pub n_grid: usize,
    pub seed: u64,
    /// Weight of the lagged-input terms.
    pub alpha: f64,
    /// Persistence of the hidden latent.
    pub rho: f64,
    /// Weight of the hidden latent.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_step")]
    pub step_minutes: u32,
}

fn default_beta() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    0.05
}

fn default_step() -> u32 {
    140
}

impl SyntheticSpec {
    pub fn new(preset: Preset, n_time: usize, n_grid: usize, seed: u64) -> Self {
        Self {
            preset,
            n_time,
            n_grid,
            seed,
            alpha: 1.0,
            rho: 0.9,
            beta: default_beta(),
            noise_std: default_noise(),
            step_minutes: default_step(),
        }
    }

    pub fn with_memory(mut self, alpha: f64, rho: f64) -> Self {
        self.alpha = alpha;
        self.rho = rho;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_time < 16 || self.n_grid == 0 {
            return Err(Error::Config(format!(
                "synthetic data needs T >= 16 and G >= 1, got T={} G={}",
                self.n_time, self.n_grid
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config("alpha and beta must be finite".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if self.step_minutes == 0 {
            return Err(Error::Config("step_minutes must be positive".into()));
        }
        Ok(())
    }
}

/// Physical offset and spread per input variable; anything unknown is standardized.
fn input_placement(name: &str, level: usize, levels: usize) -> (f64, f64) {
    let s = if levels > 1 {
        level as f64 / (levels - 1) as f64
    } else {
        0.0
    };
    match name {
        "T" | "state_t" => (200.0 + 90.0 * s, 5.0),
        "Q" | "state_q0001" => {
            let q = 1e-6 + 0.015 * s.powi(3);
            (q, 0.25 * q)
        }
        "PS" | "state_ps" => (1.0e5, 800.0),
        "SOLIN" | "pbuf_SOLIN" => (340.0, 150.0),
        "LHFLX" | "pbuf_LHFLX" => (80.0, 40.0),
        "SHFLX" | "pbuf_SHFLX" => (15.0, 10.0),
        _ => (0.0, 1.0),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Loadings `[f_in, k]`, smooth across levels within profile variables, rows
/// scaled so that each standardized input has unit variance.
fn loadings(vars: &[VariableSpec], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut u = Vec::new();
    for v in vars {
        let mut block = vec![0.0; v.levels * N_FACTORS];
        if v.is_profile() {
            for j in 0..N_FACTORS {
                for m in 0..4 {
                    let a = normal(rng) / (m + 1) as f64;
                    for l in 0..v.levels {
                        let phase =
                            std::f64::consts::PI * m as f64 * (l as f64 + 0.5) / v.levels as f64;
                        block[l * N_FACTORS + j] += a * phase.cos();
                    }
                }
            }
        } else {
            block.iter_mut().for_each(|b| *b = normal(rng));
        }
        u.extend(block);
    }
    let target = (1.0 - INPUT_NOISE_VAR).sqrt();
    for row in u.chunks_exact_mut(N_FACTORS) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v *= target / norm);
    }
    u
}

/// Random `[rows, k]` projection whose rows give outputs of standard deviation
/// `std` under covariance `cov` (`k × k`).
fn projection(rows: usize, k: usize, cov: &[f64], std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..rows * k).map(|_| normal(rng)).collect();
    for row in w.chunks_exact_mut(k) {
        let mut var = 0.0;
        for i in 0..k {
            for j in 0..k {
                var += row[i] * cov[i * k + j] * row[j];
            }
        }
        let s = std / var.sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v *= s);
    }
    w
}

fn project(w: &[f64], k: usize, r: &[f64]) -> Vec<f64> {
    w.chunks_exact(k)
        .map(|row| row.iter().zip(r).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetTensor> {
    spec.validate()?;
    let meta = preset_meta(spec.preset, spec.n_grid, spec.step_minutes);
    let f_in = super::total_levels(&meta.in_vars);
    let f_out = super::total_levels(&meta.out_vars);
    let k = N_FACTORS;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let u = loadings(&meta.in_vars, &mut rng);
    // Gram matrix G = UᵀU; Cov(r) = G² + σ²G for r = Uᵀx.
    let mut gram = vec![0.0; k * k];
    for row in u.chunks_exact(k) {
        for i in 0..k {
            for j in 0..k {
                gram[i * k + j] += row[i] * row[j];
            }
        }
    }
    let mut cov_r = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let g2: f64 = (0..k).map(|m| gram[i * k + m] * gram[m * k + j]).sum();
            cov_r[i * k + j] = g2 + INPUT_NOISE_VAR * gram[i * k + j];
        }
    }
    let w_a = projection(f_out, k, &cov_r, TANH_ARG_STD, &mut rng);
    let w_b = projection(f_out, k, &cov_r, LAG_STD, &mut rng);
    let w_c = projection(f_out, k, &cov_r, LAG_STD, &mut rng);
    let eye: Vec<f64> = (0..N_HIDDEN * N_HIDDEN)
        .map(|i| if i % (N_HIDDEN + 1) == 0 { 1.0 } else { 0.0 })
        .collect();
    let w_d = projection(f_out, N_HIDDEN, &eye, 1.0, &mut rng);

    let placement: Vec<(f64, f64)> = meta
        .in_vars
        .iter()
        .flat_map(|v| (0..v.levels).map(move |l| input_placement(&v.name, l, v.levels)))
        .collect();
    let energy = channel_scales(&meta.out_vars);

    let (n_time, n_grid) = (spec.n_time, spec.n_grid);
    let mut inputs = vec![0f32; n_time * n_grid * f_in];
    let mut targets = vec![0f32; n_time * n_grid * f_out];
    let innovation = (1.0 - spec.rho * spec.rho).sqrt();
    let noise_std = INPUT_NOISE_VAR.sqrt();
    let minutes = spec.step_minutes as f64;

    for g in 0..n_grid {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(g as u64 + 1);
        let lat = meta.grid[g][0].to_radians();
        let phase = meta.grid[g][1].to_radians();
        let mut z: Vec<f64> = (0..N_HIDDEN).map(|_| normal(&mut rng)).collect();
        let mut history: Vec<Vec<f64>> = Vec::with_capacity(n_time + MAX_LAG);
        let mut x = vec![0.0; f_in];
        for step in 0..n_time + MAX_LAG {
            let mut latent: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
            let clock = (step as f64 - MAX_LAG as f64) * minutes;
            latent[0] += SEASONAL_AMPLITUDE
                * lat.sin()
                * (2.0 * std::f64::consts::PI * clock / MINUTES_PER_YEAR + phase).cos();
            for (c, row) in u.chunks_exact(k).enumerate() {
                let loading: f64 = row.iter().zip(&latent).map(|(a, b)| a * b).sum();
                x[c] = loading + noise_std * normal(&mut rng);
            }
            let r: Vec<f64> = (0..k)
                .map(|j| u.chunks_exact(k).zip(&x).map(|(row, xc)| row[j] * xc).sum())
                .collect();
            for zi in z.iter_mut() {
                *zi = spec.rho * *zi + innovation * normal(&mut rng);
            }
            history.push(r);
            if step < MAX_LAG {
                continue;
            }
            let t = step - MAX_LAG;
            let r_now = &history[step];
            let a = project(&w_a, k, r_now);
            let b = project(&w_b, k, &history[step - 2]);
            let c = project(&w_c, k, &history[step - 4]);
            let d = project(&w_d, N_HIDDEN, &z);
            let base_in = (t * n_grid + g) * f_in;
            for (ch, (&xc, &(off, scale))) in x.iter().zip(&placement).enumerate() {
                inputs[base_in + ch] = (off + scale * xc) as f32;
            }
            let base_out = (t * n_grid + g) * f_out;
            for ch in 0..f_out {
                let y = a[ch].tanh()
                    + spec.alpha * (b[ch] + c[ch])
                    + spec.beta * d[ch]
                    + spec.noise_std * normal(&mut rng);
                targets[base_out + ch] = (y / energy[ch]) as f32;
            }
        }
    }
    DatasetTensor::new(n_time, n_grid, inputs, targets, meta)
}
