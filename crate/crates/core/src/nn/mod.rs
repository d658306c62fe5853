//! The windowed Transformer ("Paraformer") and the context-free MLP baseline.

mod init;
mod mlp;
mod paraformer;

pub use init::xavier_uniform;
pub use mlp::{mlp_forward, Activation, Mlp, MlpConfig, MlpParams};
pub use paraformer::{
    encoder_layer_forward, paraformer_forward, positional_encoding, scaled_dot_product_attention,
    EncoderLayerParams, LayerNormParams, LinearParams, ModelConfig, Paraformer, ParaformerParams,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Which architecture a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Paraformer,
    Mlp,
}

/// A trainable network together with its configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    Paraformer(Paraformer<T>),
    Mlp(Mlp<T>),
}

impl<T: Scalar> Model<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Paraformer(_) => ModelKind::Paraformer,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn f_in(&self) -> usize {
        match self {
            Model::Paraformer(m) => m.config.f_in,
            Model::Mlp(m) => m.config.f_in,
        }
    }

    pub fn f_out(&self) -> usize {
        match self {
            Model::Paraformer(m) => m.config.f_out,
            Model::Mlp(m) => m.config.f_out,
        }
    }

    /// Trainable tensors in canonical (definition) order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Model::Paraformer(m) => m.params.parameters(),
            Model::Mlp(m) => m.params.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Model::Paraformer(m) => m.params.parameters_mut(),
            Model::Mlp(m) => m.params.parameters_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records the forward pass of `x` (`[B, L, f_in]`, or `[B, f_in]` for the
    /// MLP) on `tape`. Returns the output and the parameter leaves in
    /// canonical order.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>)> {
        match self {
            Model::Paraformer(m) => {
                let vars = m.params.register(tape);
                let out = paraformer_forward(tape, x, &m.params, &vars, &m.config, train, rng)?;
                Ok((out, vars.flat()))
            }
            Model::Mlp(m) => {
                let vars = m.params.register(tape);
                let out = mlp_forward(tape, x, &vars, &m.config)?;
                Ok((out, vars.flat()))
            }
        }
    }

    /// Evaluation-mode forward pass without gradients.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (out, _) = self.forward(&mut tape, xv, false, &mut rng)?;
        Ok(tape.value(out).clone().with_requires_grad(false))
    }

    /// Replaces every parameter from a canonical-order list, checking names
    /// and shapes.
    pub fn load_parameters<U: Scalar>(&mut self, values: &[(String, Tensor<U>)]) -> Result<()> {
        let names: Vec<String> = self.parameters().into_iter().map(|(n, _)| n).collect();
        if names.len() != values.len() {
            return Err(Error::Contract(format!(
                "model has {} parameters, checkpoint has {}",
                names.len(),
                values.len()
            )));
        }
        for ((name, dst), (src_name, src)) in names.iter().zip(self.parameters_mut()).zip(values) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(Error::Contract(format!(
                    "parameter mismatch: expected {name} {:?}, found {src_name} {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = T::lit(s.to_f64_lossy());
            }
        }
        Ok(())
    }
}
