use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform initialization for a `[fan_in, fan_out]` matrix:
/// entries drawn from `U(-b, b)` with `b = √(6/(fan_in+fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| T::lit(rng.gen_range(-bound..bound)))
}
