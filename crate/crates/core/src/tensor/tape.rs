//! Wengert-list reverse mode.
//!
//! Operations append nodes in execution order, so node indices are already a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;

use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::ops::{self, NormCache};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
    },
    /// Keeps the inner `tanh` of the forward pass.
    Gelu(Var, Vec<T>),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    /// Elementwise product with a constant array (dropout, loss masks).
    MulConst(Var, Vec<T>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Square(Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Operation recorder owned by one forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad());
        value = value.with_requires_grad(rg);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; its `requires_grad` flag is kept as given.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a node after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        let t = &mut self.nodes[v.0].value;
        let g = t.grad().map(|g| g.to_vec());
        t.zero_grad();
        g
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let out = ops::bmm(self.value(a), self.value(b), transpose_b)?;
        Ok(self.push(out, Op::Bmm { a, b, transpose_b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x · W + b` for `x[rows, k]`, `W[k, n]`, `b[n]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_bias(y, bias)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = ops::scale(self.value(x), c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, cache) =
            ops::layer_norm_cached(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (out, inner) = ops::gelu_with_inner(self.value(x));
        self.push(out, Op::Gelu(x, inner), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = ops::leaky_relu(self.value(x), slope);
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = ops::tanh(self.value(x));
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = ops::square(self.value(x));
        self.push(out, Op::Square(x), &[x])
    }

    /// Multiplies by a constant array of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if factor.len() != xv.numel() {
            return Err(Error::shape("mul_const", xv.shape(), &[factor.len()]));
        }
        let data = xv
            .data()
            .iter()
            .zip(&factor)
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.push(out, Op::MulConst(x, factor), &[x]))
    }

    /// Inverted dropout: zeroes with probability `p`, scales survivors by
    /// `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask = (0..self.value(x).numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.mul_const(x, mask)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(x)
            .clone()
            .with_requires_grad(false)
            .reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = ops::permute(self.value(x), perm)?;
        Ok(self.push(out, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = ops::sum(self.value(x));
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate (`+=`) over
    /// fan-out and are stored on every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.value(loss).requires_grad() {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad() {
                let g = g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.value.set_grad(Some(g))?;
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let mut acc = |v: Var, contrib: Vec<T>| accumulate(grads, v, contrib);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(m, n, k, g, bv.data(), &mut da);
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(m, k, n, av.data(), g, &mut db);
                    acc(*b, db);
                }
            }
            Op::Bmm { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = if *transpose_b {
                    bv.shape()[1]
                } else {
                    bv.shape()[2]
                };
                if self.wants(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for ((dai, gi), bi) in da
                        .chunks_exact_mut(m * k)
                        .zip(g.chunks_exact(m * n))
                        .zip(bv.data().chunks_exact(k * n))
                    {
                        if *transpose_b {
                            // C = A Bᵀ, B[n,k]: dA = dC · B
                            gemm(m, n, k, gi, bi, dai);
                        } else {
                            // B[k,n]: dA = dC · Bᵀ
                            gemm_nt(m, n, k, gi, bi, dai);
                        }
                    }
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for ((dbi, gi), ai) in db
                        .chunks_exact_mut(k * n)
                        .zip(g.chunks_exact(m * n))
                        .zip(av.data().chunks_exact(m * k))
                    {
                        if *transpose_b {
                            // dB[n,k] = dCᵀ · A
                            gemm_tn(m, n, k, gi, ai, dbi);
                        } else {
                            // dB[k,n] = Aᵀ · dC
                            gemm_tn(m, k, n, ai, gi, dbi);
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(*x) {
                    acc(*x, g.to_vec());
                }
                if self.wants(*bias) {
                    let n = self.value(*bias).numel();
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks_exact(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*bias, db);
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    acc(*x, g.iter().map(|&v| v * *c).collect());
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let n = node.value.last_dim();
                    let mut dx = vec![T::zero(); y.len()];
                    for ((dr, yr), gr) in dx
                        .chunks_exact_mut(n)
                        .zip(y.chunks_exact(n))
                        .zip(g.chunks_exact(n))
                    {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let d = node.value.last_dim();
                let gam = self.value(*gamma).data();
                if self.wants(*x) {
                    let inv_d = T::one() / T::lit(d as f64);
                    let mut dx = vec![T::zero(); g.len()];
                    for (((dr, gr), hr), &r) in dx
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(cache.xhat.chunks_exact(d))
                        .zip(&cache.rstd)
                    {
                        // dxhat = g ⊙ γ
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for ((&gv, &gm), &h) in gr.iter().zip(gam).zip(hr) {
                            let dh = gv * gm;
                            mean_dh += dh;
                            mean_dh_h += dh * h;
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for (((o, &gv), &gm), &h) in dr.iter_mut().zip(gr).zip(gam).zip(hr) {
                            *o = r * (gv * gm - mean_dh - h * mean_dh_h);
                        }
                    }
                    acc(*x, dx);
                }
                if self.wants(*gamma) {
                    let mut dg = vec![T::zero(); d];
                    for (gr, hr) in g.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
                        for ((o, &gv), &h) in dg.iter_mut().zip(gr).zip(hr) {
                            *o += gv * h;
                        }
                    }
                    acc(*gamma, dg);
                }
                if self.wants(*beta) {
                    let mut db = vec![T::zero(); d];
                    for gr in g.chunks_exact(d) {
                        for (o, &gv) in db.iter_mut().zip(gr) {
                            *o += gv;
                        }
                    }
                    acc(*beta, db);
                }
            }
            Op::Gelu(x, inner) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    acc(
                        *x,
                        g.iter()
                            .zip(xv)
                            .zip(inner)
                            .map(|((&d, &v), &t)| d * ops::gelu_derivative_from(v, t))
                            .collect(),
                    );
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    acc(
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                            .collect(),
                    );
                }
            }
            Op::LeakyRelu(x, slope) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    acc(
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(&d, &v)| if v > T::zero() { d } else { d * *slope })
                            .collect(),
                    );
                }
            }
            Op::Tanh(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    acc(
                        *x,
                        g.iter()
                            .zip(y)
                            .map(|(&d, &t)| d * (T::one() - t * t))
                            .collect(),
                    );
                }
            }
            Op::MulConst(x, factor) => {
                if self.wants(*x) {
                    acc(*x, g.iter().zip(factor).map(|(&d, &f)| d * f).collect());
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    acc(*x, g.to_vec());
                }
            }
            Op::Permute(x, perm) => {
                if self.wants(*x) {
                    let gt = Tensor::new(node.value.shape(), g.to_vec())?;
                    let back = ops::permute(&gt, &ops::inverse_perm(perm))?;
                    acc(*x, back.into_data());
                }
            }
            Op::Square(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let two = T::lit(2.0);
                    acc(*x, g.iter().zip(xv).map(|(&d, &v)| two * v * d).collect());
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    acc(*x, vec![g[0]; self.value(*x).numel()]);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}
