//! Eager (non-recording) tensor operations. The tape reuses these for its
//! forward values, so gradient-free inference and training share one code path.

use super::kernels::{gemm, gemm_nt};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `[m,k] · [k,n] -> [m,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), b.data(), &mut c);
    Tensor::new(&[m, n], c)
}

/// Batched matmul over the leading axis: `[N,m,k] · [N,k,n]`, or
/// `[N,m,k] · [N,n,k]ᵀ` when `transpose_b`.
pub fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, transpose_b: bool) -> Result<Tensor<T>> {
    let err = || Error::shape("bmm", a.shape(), b.shape());
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
        return Err(err());
    }
    let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bk, n) = if transpose_b {
        (b.shape()[2], b.shape()[1])
    } else {
        (b.shape()[1], b.shape()[2])
    };
    if bk != k {
        return Err(err());
    }
    let mut c = vec![T::zero(); batch * m * n];
    for ((ci, ai), bi) in c
        .chunks_exact_mut(m * n)
        .zip(a.data().chunks_exact(m * k))
        .zip(b.data().chunks_exact(k * n))
    {
        if transpose_b {
            gemm_nt(m, k, n, ai, bi, ci);
        } else {
            gemm(m, k, n, ai, bi, ci);
        }
    }
    Tensor::new(&[batch, m, n], c)
}

fn zip_with<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

/// Adds `bias[n]` to every last-axis slice of `x[..., n]`.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if bias.rank() != 1 || bias.shape()[0] != x.last_dim() {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(bias.numel()) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v * c)
}

/// Softmax over the last axis with max subtraction.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if let Some(i) = x.data().iter().position(|v| v.is_nan()) {
        return Err(Error::Numeric(format!(
            "softmax input is NaN at element {i}"
        )));
    }
    let n = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape(), out)
}

/// Per-row normalized values and reciprocal standard deviations, the saved
/// state needed by the layer-norm backward rule.
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_cached<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let d = x.last_dim();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if eps <= T::zero() {
        return Err(Error::Contract("layer_norm eps must be positive".into()));
    }
    let rows = x.numel() / d;
    let inv_d = T::one() / T::lit(d as f64);
    let mut xhat = vec![T::zero(); x.numel()];
    let mut rstd = Vec::with_capacity(rows);
    let mut out = vec![T::zero(); x.numel()];
    for ((xr, hr), or) in x
        .data()
        .chunks_exact(d)
        .zip(xhat.chunks_exact_mut(d))
        .zip(out.chunks_exact_mut(d))
    {
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        for (((h, o), &v), (&g, &b)) in hr
            .iter_mut()
            .zip(or.iter_mut())
            .zip(xr)
            .zip(gamma.data().iter().zip(beta.data()))
        {
            *h = (v - mean) * r;
            *o = g * *h + b;
        }
        rstd.push(r);
    }
    Ok((Tensor::new(x.shape(), out)?, NormCache { xhat, rstd }))
}

/// `gamma ⊙ (x − μ)/√(σ² + eps) + beta` over the last axis.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_cached(x, gamma, beta, eps).map(|(t, _)| t)
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    T::lit(0.5) * x * (T::one() + gelu_inner(x))
}

fn gelu_inner<T: Scalar>(x: T) -> T {
    (T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x)).tanh()
}

#[cfg(test)]
pub(crate) fn gelu_derivative<T: Scalar>(x: T) -> T {
    gelu_derivative_from(x, gelu_inner(x))
}

/// Derivative given `t = tanh(√(2/π)(x + 0.044715x³))`.
pub(crate) fn gelu_derivative_from<T: Scalar>(x: T, t: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let a = T::lit(GELU_CUBIC);
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

/// GELU values together with the inner `tanh` terms.
pub(crate) fn gelu_with_inner<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let inner: Vec<T> = x.data().iter().map(|&v| gelu_inner(v)).collect();
    let half = T::lit(0.5);
    let out = x
        .data()
        .iter()
        .zip(&inner)
        .map(|(&v, &t)| half * v * (T::one() + t))
        .collect();
    (Tensor::new(x.shape(), out).expect("same shape"), inner)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn square<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * v)
}

/// Sequential left-to-right sum.
pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut s = T::zero();
    for &v in x.data() {
        s += v;
    }
    Tensor::scalar(s)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn check_perm(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(Error::Contract(format!(
            "permutation {perm:?} for rank {rank}"
        )));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::Contract(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Axis permutation: `out.shape[i] = x.shape[perm[i]]`.
pub fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    check_perm(perm, x.rank())?;
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(&out_shape);
    let mut out = Vec::with_capacity(total);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(x.data()[offset]);
        // odometer increment over the output index
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            offset += src_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= src_strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((gelu_derivative(x) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&i2, &m).unwrap().data(), m.data());
        let r = matmul(&t(&[1, 2], &[1.0, 2.0]), &t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(r.shape(), &[1, 1]);
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let s = softmax(&t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&t(&[2], &[1000.0, 0.0])).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1].abs() < 1e-12);
        assert!(softmax(&t(&[2], &[f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::<f64>::ones(&[4]);
        let zeros = Tensor::<f64>::zeros(&[4]);
        let out = layer_norm(&t(&[4], &[5.0; 4]), &ones, &zeros, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let out = layer_norm(
            &t(&[2], &[1.0, 3.0]),
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            1e-14,
        )
        .unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-12);
        assert!((out.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // out[c, a, b] == x[a, b, c]
        assert_eq!(p.data()[6 + 3 + 2], x.data()[12 + 2 * 4 + 1]);
        let back = permute(&p, &inverse_perm(&[2, 0, 1])).unwrap();
        assert_eq!(back, x);
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let b = Tensor::<f64>::from_fn(&[2, 4, 5], |i| (i as f64).cos());
        let c = bmm(&a, &b, false).unwrap();
        for n in 0..2 {
            let an = Tensor::new(&[3, 4], a.data()[n * 12..(n + 1) * 12].to_vec()).unwrap();
            let bn = Tensor::new(&[4, 5], b.data()[n * 20..(n + 1) * 20].to_vec()).unwrap();
            assert_eq!(
                &c.data()[n * 15..(n + 1) * 15],
                matmul(&an, &bn).unwrap().data()
            );
        }
        let bt = permute(&b, &[0, 2, 1]).unwrap();
        assert_eq!(bmm(&a, &bt, true).unwrap(), c);
    }
}
