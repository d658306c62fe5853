use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::xavier_uniform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Length of the fixed positional table. Windows up to this length can be
/// evaluated without re-initializing.
pub const DEFAULT_MAX_LEN: usize = 64;
const LN_EPS: f64 = 1e-5;

fn default_ffn_mult() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.1
}
fn default_window() -> usize {
    5
}
fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

/// Hyperparameters of the windowed encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Context window length L.
    #[serde(default = "default_window")]
    pub window: usize,
    pub f_in: usize,
    pub f_out: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

impl ModelConfig {
    /// Defaults for the best v1 configuration: 256-wide embedding, six
    /// layers, four heads, window 5.
    pub fn new(f_in: usize, f_out: usize) -> Self {
        Self {
            d_model: 256,
            n_layers: 6,
            n_heads: 4,
            ffn_mult: default_ffn_mult(),
            dropout: default_dropout(),
            window: default_window(),
            f_in,
            f_out,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_mult", self.ffn_mult),
            ("window", self.window),
            ("f_in", self.f_in),
            ("f_out", self.f_out),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "sinusoidal encoding needs an even d_model, got {}",
                self.d_model
            )));
        }
        if self.window > self.max_len {
            return Err(Error::Config(format!(
                "window {} exceeds positional table length {}",
                self.window, self.max_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Fixed sinusoidal table:
/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(len: usize, d_model: usize) -> Result<Tensor<T>> {
    if len == 0 || d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs len >= 1 and even d_model, got ({len}, {d_model})"
        )));
    }
    let mut data = Vec::with_capacity(len * d_model);
    for t in 0..len {
        for i in 0..d_model / 2 {
            let freq = 10000f64.powf((2 * i) as f64 / d_model as f64);
            let angle = t as f64 / freq;
            data.push(T::lit(angle.sin()));
            data.push(T::lit(angle.cos()));
        }
    }
    Tensor::new(&[len, d_model], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    /// `[fan_in, fan_out]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearParams<T> {
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: xavier_uniform(fan_in, fan_out, rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[d]),
            beta: Tensor::zeros(&[d]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams<T> {
    pub query: LinearParams<T>,
    pub key: LinearParams<T>,
    pub value: LinearParams<T>,
    pub output: LinearParams<T>,
    pub ffn_in: LinearParams<T>,
    pub ffn_out: LinearParams<T>,
    pub norm1: LayerNormParams<T>,
    pub norm2: LayerNormParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParaformerParams<T> {
    pub embed: LinearParams<T>,
    /// Fixed, not trained and not stored in checkpoints.
    pub pos_table: Tensor<T>,
    pub layers: Vec<EncoderLayerParams<T>>,
    pub head: LinearParams<T>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormVars {
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    query: LinearVars,
    key: LinearVars,
    value: LinearVars,
    output: LinearVars,
    ffn_in: LinearVars,
    ffn_out: LinearVars,
    norm1: NormVars,
    norm2: NormVars,
}

pub struct ParaformerVars {
    embed: LinearVars,
    layers: Vec<LayerVars>,
    head: LinearVars,
}

impl ParaformerVars {
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.embed.weight, self.embed.bias];
        for l in &self.layers {
            for lin in [l.query, l.key, l.value, l.output, l.ffn_in, l.ffn_out] {
                out.push(lin.weight);
                out.push(lin.bias);
            }
            for n in [l.norm1, l.norm2] {
                out.push(n.gamma);
                out.push(n.beta);
            }
        }
        out.push(self.head.weight);
        out.push(self.head.bias);
        out
    }
}

pub(crate) fn register_linear<T: Scalar>(tape: &mut Tape<T>, p: &LinearParams<T>) -> LinearVars {
    LinearVars {
        weight: tape.param(p.weight.clone()),
        bias: tape.param(p.bias.clone()),
    }
}

impl<T: Scalar> EncoderLayerParams<T> {
    fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let d = config.d_model;
        let hidden = config.ffn_mult * d;
        Self {
            query: LinearParams::init(d, d, rng),
            key: LinearParams::init(d, d, rng),
            value: LinearParams::init(d, d, rng),
            output: LinearParams::init(d, d, rng),
            ffn_in: LinearParams::init(d, hidden, rng),
            ffn_out: LinearParams::init(hidden, d, rng),
            norm1: LayerNormParams::new(d),
            norm2: LayerNormParams::new(d),
        }
    }

    fn register(&self, tape: &mut Tape<T>) -> LayerVars {
        let norm = |tape: &mut Tape<T>, n: &LayerNormParams<T>| NormVars {
            gamma: tape.param(n.gamma.clone()),
            beta: tape.param(n.beta.clone()),
        };
        LayerVars {
            query: register_linear(tape, &self.query),
            key: register_linear(tape, &self.key),
            value: register_linear(tape, &self.value),
            output: register_linear(tape, &self.output),
            ffn_in: register_linear(tape, &self.ffn_in),
            ffn_out: register_linear(tape, &self.ffn_out),
            norm1: norm(tape, &self.norm1),
            norm2: norm(tape, &self.norm2),
        }
    }

    /// Layer params as an isolated set of tape leaves, for single-layer use.
    pub fn register_on(&self, tape: &mut Tape<T>) -> LayerVars {
        self.register(tape)
    }
}

impl<T: Scalar> ParaformerParams<T> {
    /// Xavier-uniform matrices, zero biases, unit gains, drawn in canonical
    /// order from a ChaCha stream seeded with `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = LinearParams::init(config.f_in, config.d_model, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayerParams::init(config, &mut rng))
            .collect();
        let head = LinearParams::init(config.d_model, config.f_out, &mut rng);
        Ok(Self {
            embed,
            pos_table: positional_encoding(config.max_len, config.d_model)?,
            layers,
            head,
        })
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("embed.weight".to_string(), &self.embed.weight),
            ("embed.bias".to_string(), &self.embed.bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, lin) in [
                ("attn.query", &l.query),
                ("attn.key", &l.key),
                ("attn.value", &l.value),
                ("attn.output", &l.output),
                ("ffn.in", &l.ffn_in),
                ("ffn.out", &l.ffn_out),
            ] {
                out.push((format!("layers.{i}.{name}.weight"), &lin.weight));
                out.push((format!("layers.{i}.{name}.bias"), &lin.bias));
            }
            for (name, n) in [("norm1", &l.norm1), ("norm2", &l.norm2)] {
                out.push((format!("layers.{i}.{name}.gamma"), &n.gamma));
                out.push((format!("layers.{i}.{name}.beta"), &n.beta));
            }
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embed.weight, &mut self.embed.bias];
        for l in &mut self.layers {
            for lin in [
                &mut l.query,
                &mut l.key,
                &mut l.value,
                &mut l.output,
                &mut l.ffn_in,
                &mut l.ffn_out,
            ] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
            for n in [&mut l.norm1, &mut l.norm2] {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn register(&self, tape: &mut Tape<T>) -> ParaformerVars {
        ParaformerVars {
            embed: register_linear(tape, &self.embed),
            layers: self.layers.iter().map(|l| l.register(tape)).collect(),
            head: register_linear(tape, &self.head),
        }
    }
}

/// Attention over `q, k, v: [B, h, L, d_h]`: `softmax(q·kᵀ/√d_h)·v`, no mask.
/// Returns `(out [B,h,L,d_h], weights [B,h,L,L])`.
pub fn scaled_dot_product_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let shape = tape.shape(q).to_vec();
    if shape.len() != 4 || tape.shape(k) != shape.as_slice() || tape.shape(v) != shape.as_slice() {
        return Err(Error::shape("attention", &shape, tape.shape(k)));
    }
    let (b, h, l, dh) = (shape[0], shape[1], shape[2], shape[3]);
    let flat = [b * h, l, dh];
    let q3 = tape.reshape(q, &flat)?;
    let k3 = tape.reshape(k, &flat)?;
    let v3 = tape.reshape(v, &flat)?;
    let scores = tape.bmm(q3, k3, true)?;
    let scores = tape.scale(scores, T::one() / T::lit(dh as f64).sqrt());
    let weights = tape.softmax(scores)?;
    let out = tape.bmm(weights, v3, false)?;
    let out = tape.reshape(out, &shape)?;
    let weights = tape.reshape(weights, &[b, h, l, l])?;
    Ok((out, weights))
}

fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, b: usize, l: usize, h: usize) -> Result<Var> {
    let d = tape.shape(x)[1];
    let x = tape.reshape(x, &[b, l, h, d / h])?;
    tape.permute(x, &[0, 2, 1, 3])
}

fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    x2: Var,
    vars: &LayerVars,
    b: usize,
    l: usize,
    n_heads: usize,
) -> Result<Var> {
    let d = tape.shape(x2)[1];
    let q = tape.linear(x2, vars.query.weight, vars.query.bias)?;
    let k = tape.linear(x2, vars.key.weight, vars.key.bias)?;
    let v = tape.linear(x2, vars.value.weight, vars.value.bias)?;
    let q = split_heads(tape, q, b, l, n_heads)?;
    let k = split_heads(tape, k, b, l, n_heads)?;
    let v = split_heads(tape, v, b, l, n_heads)?;
    let (ctx, _) = scaled_dot_product_attention(tape, q, k, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b * l, d])?;
    tape.linear(ctx, vars.output.weight, vars.output.bias)
}

/// Post-norm encoder layer on `x: [B, L, d_model]`:
/// `x₁ = LN(x + Dropout(MHA(x)))`, `out = LN(x₁ + Dropout(W₂·gelu(W₁·x₁)))`.
pub fn encoder_layer_forward<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &LayerVars,
    config: &ModelConfig,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != config.d_model {
        return Err(Error::shape(
            "encoder_layer",
            &shape,
            &[0, 0, config.d_model],
        ));
    }
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    let p = if train { config.dropout } else { 0.0 };
    let eps = T::lit(LN_EPS);

    let x2 = tape.reshape(x, &[b * l, d])?;
    let attn = multi_head_attention(tape, x2, vars, b, l, config.n_heads)?;
    let attn = tape.dropout(attn, p, rng)?;
    let res = tape.add(x2, attn)?;
    let x1 = tape.layer_norm(res, vars.norm1.gamma, vars.norm1.beta, eps)?;

    let hid = tape.linear(x1, vars.ffn_in.weight, vars.ffn_in.bias)?;
    let hid = tape.gelu(hid);
    let ff = tape.linear(hid, vars.ffn_out.weight, vars.ffn_out.bias)?;
    let ff = tape.dropout(ff, p, rng)?;
    let res = tape.add(x1, ff)?;
    let out = tape.layer_norm(res, vars.norm2.gamma, vars.norm2.beta, eps)?;
    tape.reshape(out, &[b, l, d])
}

/// Full model on `x: [B, L, f_in]`; the head is applied per token so every
/// window position gets a prediction `[B, L, f_out]`.
pub fn paraformer_forward<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    x: Var,
    params: &ParaformerParams<T>,
    vars: &ParaformerVars,
    config: &ModelConfig,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != config.f_in {
        return Err(Error::Contract(format!(
            "paraformer expects input [B, L, {}], got {shape:?}",
            config.f_in
        )));
    }
    let (b, l) = (shape[0], shape[1]);
    let max_len = params.pos_table.shape()[0];
    if l > max_len {
        return Err(Error::Contract(format!(
            "window length {l} exceeds positional table length {max_len}"
        )));
    }
    let d = config.d_model;
    let x2 = tape.reshape(x, &[b * l, config.f_in])?;
    let emb = tape.linear(x2, vars.embed.weight, vars.embed.bias)?;
    let pe_rows = &params.pos_table.data()[..l * d];
    let tiled = Tensor::new(&[b * l, d], pe_rows.repeat(b))?;
    let pe = tape.constant(tiled);
    let h = tape.add(emb, pe)?;
    let mut h = tape.reshape(h, &[b, l, d])?;
    for layer in &vars.layers {
        h = encoder_layer_forward(tape, h, layer, config, train, rng)?;
    }
    let h2 = tape.reshape(h, &[b * l, d])?;
    let out = tape.linear(h2, vars.head.weight, vars.head.bias)?;
    tape.reshape(out, &[b, l, config.f_out])
}

/// Paraformer model: configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Paraformer<T> {
    pub config: ModelConfig,
    pub params: ParaformerParams<T>,
}

impl<T: Scalar> Paraformer<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParaformerParams::init(&config, seed)?;
        Ok(Self { config, params })
    }
}
