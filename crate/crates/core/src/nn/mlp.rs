use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::paraformer::{register_linear, LinearParams, LinearVars};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Negative slope 0.01.
    #[default]
    LeakyRelu,
    Relu,
    Gelu,
}

pub const LEAKY_SLOPE: f64 = 0.01;

fn default_hidden() -> Vec<usize> {
    vec![512; 5]
}

/// Context-free baseline: each sample (time step, grid cell) is mapped
/// independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    #[serde(default = "default_hidden")]
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub f_in: usize,
    pub f_out: usize,
}

impl MlpConfig {
    pub fn new(f_in: usize, f_out: usize) -> Self {
        Self {
            hidden_widths: default_hidden(),
            activation: Activation::default(),
            f_in,
            f_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::Config("MLP needs at least one hidden layer".into()));
        }
        if self.hidden_widths.contains(&0) || self.f_in == 0 || self.f_out == 0 {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<LinearParams<T>>,
}

pub struct MlpVars {
    layers: Vec<LinearVars>,
}

impl MlpVars {
    pub fn flat(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

impl<T: Scalar> MlpParams<T> {
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![config.f_in];
        widths.extend(&config.hidden_widths);
        widths.push(config.f_out);
        let layers = widths
            .windows(2)
            .map(|w| LinearParams::init(w[0], w[1], &mut rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layers.{i}.weight"), &l.weight),
                    (format!("layers.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn register(&self, tape: &mut Tape<T>) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| register_linear(tape, l))
                .collect(),
        }
    }
}

/// Affine + activation stack over the last axis of `x` (`[B, f_in]` or
/// `[B, L, f_in]`); leading axes are treated as independent samples.
pub fn mlp_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &MlpVars,
    config: &MlpConfig,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.last() != Some(&config.f_in) {
        return Err(Error::Contract(format!(
            "MLP expects last dimension {}, got {shape:?}",
            config.f_in
        )));
    }
    let rows = shape[..shape.len() - 1].iter().product::<usize>();
    let mut h = tape.reshape(x, &[rows, config.f_in])?;
    let n = vars.layers.len();
    for (i, lin) in vars.layers.iter().enumerate() {
        h = tape.linear(h, lin.weight, lin.bias)?;
        if i + 1 < n {
            h = match config.activation {
                Activation::LeakyRelu => tape.leaky_relu(h, T::lit(LEAKY_SLOPE)),
                Activation::Relu => tape.relu(h),
                Activation::Gelu => tape.gelu(h),
            };
        }
    }
    let mut out_shape = shape;
    *out_shape.last_mut().expect("rank >= 1") = config.f_out;
    tape.reshape(h, &out_shape)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub config: MlpConfig,
    pub params: MlpParams<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        let params = MlpParams::init(&config, seed)?;
        Ok(Self { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_output() {
        let config = MlpConfig {
            hidden_widths: vec![3, 3],
            activation: Activation::LeakyRelu,
            f_in: 4,
            f_out: 2,
        };
        let mut params = MlpParams::<f64>::init(&config, 1).unwrap();
        for p in params.parameters_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let x = tape.constant(Tensor::from_fn(&[5, 4], |i| i as f64 - 7.0));
        let y = mlp_forward(&mut tape, x, &vars, &config).unwrap();
        assert_eq!(tape.shape(y), &[5, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_neuron_hand_check() {
        // 1 -> 1 (leaky relu) -> 1
        let config = MlpConfig {
            hidden_widths: vec![1],
            activation: Activation::LeakyRelu,
            f_in: 1,
            f_out: 1,
        };
        let params = MlpParams {
            layers: vec![
                LinearParams {
                    weight: Tensor::from_f64(&[1, 1], &[2.0]).unwrap(),
                    bias: Tensor::from_f64(&[1], &[-1.0]).unwrap(),
                },
                LinearParams {
                    weight: Tensor::from_f64(&[1, 1], &[3.0]).unwrap(),
                    bias: Tensor::from_f64(&[1], &[0.5]).unwrap(),
                },
            ],
        };
        let mut tape = Tape::<f64>::new();
        let vars = params.register(&mut tape);
        let x = tape.constant(Tensor::from_f64(&[2, 1], &[2.0, -1.0]).unwrap());
        let y = mlp_forward(&mut tape, x, &vars, &config).unwrap();
        // x=2: h = 3 -> 3*3+0.5 = 9.5; x=-1: h = -3 -> -0.03 -> -0.09+0.5 = 0.41
        let out = tape.value(y).data();
        assert!((out[0] - 9.5).abs() < 1e-12);
        assert!((out[1] - 0.41).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let config = MlpConfig::new(4, 2);
        let params = MlpParams::<f64>::init(
            &MlpConfig {
                hidden_widths: vec![2],
                ..config.clone()
            },
            0,
        )
        .unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let x = tape.constant(Tensor::zeros(&[3, 5]));
        assert!(matches!(
            mlp_forward(&mut tape, x, &vars, &config),
            Err(Error::Contract(_))
        ));
        assert!(MlpConfig {
            hidden_widths: vec![],
            ..config
        }
        .validate()
        .is_err());
    }
}
