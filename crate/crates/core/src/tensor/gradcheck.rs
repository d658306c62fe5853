//! Central finite-difference checks of tape gradients at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Model;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            max_relative_error: 0.0,
            worst: (0, 0),
            checked: 0,
        }
    }

    fn record(&mut self, input: usize, element: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        if e > self.max_relative_error || self.checked == 0 {
            self.max_relative_error = e;
            self.worst = (input, element);
        }
        self.checked += 1;
    }
}

/// Contracts `v` with fixed pseudo-random weights into a scalar, so that every
/// output element contributes a distinct gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tape.value(v).numel();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = tape.mul_const(v, w)?;
    Ok(tape.sum(m))
}

/// Compares gradients of the scalar `f(inputs)` against central differences
/// for every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Contract("missing gradient".into()))
        })
        .collect::<Result<_>>()?;

    let mut report = GradCheck::new();
    let mut work = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            report.record(i, j, a, (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Checks the gradient of a loss `loss(tape, model output)` with respect to
/// every model parameter, in evaluation mode (no dropout).
pub fn check_model<F>(
    model: &mut Model<f64>,
    x: &Tensor<f64>,
    step: f64,
    loss: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let eval = |model: &Model<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (out, _) = model.forward(
            &mut tape,
            xv,
            false,
            &mut rand::rngs::mock::StepRng::new(0, 0),
        )?;
        let l = loss(&mut tape, out)?;
        tape.value(l).item()
    };
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (out, params) = model.forward(&mut tape, xv, false, &mut rng)?;
    let l = loss(&mut tape, out)?;
    tape.backward(l)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&p| tape.grad(p).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut report = GradCheck::new();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.parameters()[i].1.data()[j];
            model.parameters_mut()[i].data_mut()[j] = orig + step;
            let plus = eval(model)?;
            model.parameters_mut()[i].data_mut()[j] = orig - step;
            let minus = eval(model)?;
            model.parameters_mut()[i].data_mut()[j] = orig;
            report.record(i, j, a, (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}
