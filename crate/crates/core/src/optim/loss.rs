use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

fn mask_weights<T: Scalar>(shape: &[usize], mask: &[bool]) -> Result<Vec<T>> {
    let width = *shape.last().unwrap_or(&1);
    let positions = shape.iter().product::<usize>() / width.max(1);
    if mask.len() != positions {
        return Err(Error::shape("mse_loss mask", shape, &[mask.len()]));
    }
    let scored = mask.iter().filter(|&&m| m).count();
    if scored == 0 {
        return Err(Error::Contract("loss mask selects no positions".into()));
    }
    let w = T::one() / T::lit((scored * width) as f64);
    Ok(mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { w } else { T::zero() }, width))
        .collect())
}

/// Mean squared error over the masked positions (mask covers every axis but the last).
pub fn mse_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    mask: &[bool],
) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    if shape != target.shape() {
        return Err(Error::shape("mse_loss", &shape, target.shape()));
    }
    let weights = mask_weights(&shape, mask)?;
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff);
    let weighted = tape.mul_const(sq, weights)?;
    Ok(tape.sum(weighted))
}

/// Sum of squared errors and the number of contributing values, without a tape.
pub fn masked_sse<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &[bool],
) -> Result<(f64, usize)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("masked_sse", pred.shape(), target.shape()));
    }
    let width = pred.last_dim();
    if mask.len() * width != pred.numel() {
        return Err(Error::shape("masked_sse mask", pred.shape(), &[mask.len()]));
    }
    let mut sse = 0.0;
    let mut n = 0;
    for ((p, t), &m) in pred
        .data()
        .chunks_exact(width)
        .zip(target.data().chunks_exact(width))
        .zip(mask)
    {
        if m {
            for (a, b) in p.iter().zip(t) {
                let d = a.to_f64_lossy() - b.to_f64_lossy();
                sse += d * d;
            }
            n += width;
        }
    }
    Ok((sse, n))
}
