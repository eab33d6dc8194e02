//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass in order. Calling
//! [`Tape::backward`] walks the record in reverse and accumulates the
//! gradient of a scalar output with respect to every variable that
//! requires one. Outputs of every forward op are checked for NaN/Inf.

use rand::Rng;

use super::linalg::gemm;
use super::lstsq::{LeastSquaresLayer, LeastSquaresResult, ResidualLoss, Ridge};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `b` matches the trailing dimensions of `a`.
    AddBroadcast(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Softmax(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv1d {
        x: Var,
        weight: Var,
        bias: Var,
        cols: Vec<f64>,
        kernel: usize,
    },
    MaxOverAxis {
        x: Var,
        argmax: Vec<usize>,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    LeastSquares {
        features: Var,
        layer: Box<LeastSquaresLayer>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(&delta) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Which side of every non-differentiable point the recorded values sit
    /// on: the sign of each ReLU input and the winner of each max. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => sig.extend(self.value(*x).data().iter().map(|&v| usize::from(v > 0.0))),
                Op::MaxOverAxis { argmax, .. } => sig.extend_from_slice(argmax),
                _ => {}
            }
        }
        sig
    }

    /// A leaf that receives a gradient.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, what: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        value.check_finite(what)?;
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect())?;
        self.push("scale", value, Op::Scale(x, s), &[x])
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add_broadcast", ta, tb));
        }
        let inner = tb.len().max(1);
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(inner) {
            for (x, y) in chunk.iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        let value = Tensor::new(sa.to_vec(), data)?;
        self.push("add_broadcast", value, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match (ta.shape(), tb.shape()) {
            (&[n, k], &[k2, p]) if k == k2 => {
                let mut out = vec![0.0; n * p];
                gemm(n, k, p, 1.0, ta.data(), false, tb.data(), false, 0.0, &mut out);
                Tensor::new(vec![n, p], out)?
            }
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect())?;
        self.push("relu", value, Op::Relu(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let last = *t.shape().last().ok_or(Error::InvalidShape {
            what: "softmax input",
            shape: vec![],
        })?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(last.max(1)) {
            softmax_row(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Layer normalization over the last axis, with optional affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let width = *t.shape().last().ok_or(Error::InvalidShape {
            what: "layer_norm input",
            shape: vec![],
        })?;
        for p in [gain, bias].into_iter().flatten() {
            if self.shape(p) != [width] {
                return Err(shape_err("layer_norm", t, self.value(p)));
            }
        }
        let rows = t.len() / width.max(1);
        let mut xhat = vec![0.0; t.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &t.data()[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for (o, v) in xhat[r * width..(r + 1) * width].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gain {
            let g = self.value(g).data();
            for row in out.chunks_mut(width) {
                for (o, gv) in row.iter_mut().zip(g) {
                    *o *= gv;
                }
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(width) {
                for (o, bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let parents: Vec<Var> = std::iter::once(x).chain(gain).chain(bias).collect();
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &parents,
        )
    }

    /// 1-d convolution over the middle axis of `x: [batch, time, c_in]` with
    /// `weight: [kernel, c_in, c_out]`, `bias: [c_out]` and same padding.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        let (batch, time, c_in) = tx.dims3()?;
        let (kernel, w_in, c_out) = tw.dims3()?;
        if w_in != c_in {
            return Err(shape_err("conv1d", tx, tw));
        }
        if tb.shape() != [c_out] {
            return Err(shape_err("conv1d bias", tw, tb));
        }
        let pad = (kernel - 1) / 2;
        let width = kernel * c_in;
        let rows = batch * time;
        let mut cols = vec![0.0; rows * width];
        let xd = tx.data();
        for b in 0..batch {
            for t in 0..time {
                let row = &mut cols[(b * time + t) * width..(b * time + t + 1) * width];
                for j in 0..kernel {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= time as isize {
                        continue;
                    }
                    let s = (b * time + src as usize) * c_in;
                    row[j * c_in..(j + 1) * c_in].copy_from_slice(&xd[s..s + c_in]);
                }
            }
        }
        let mut out = vec![0.0; rows * c_out];
        for row in out.chunks_mut(c_out) {
            row.copy_from_slice(tb.data());
        }
        gemm(rows, width, c_out, 1.0, &cols, false, tw.data(), false, 1.0, &mut out);
        let value = Tensor::new(vec![batch, time, c_out], out)?;
        self.push(
            "conv1d",
            value,
            Op::Conv1d {
                x,
                weight,
                bias,
                cols,
                kernel,
            },
            &[x, weight, bias],
        )
    }

    /// Maximum over `axis`, removing it. Ties resolve to the first index.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::InvalidShape {
                what: "max_over_axis input",
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        let d = t.data();
        for o in 0..outer {
            for a in 0..axis_len {
                let base = (o * axis_len + a) * inner;
                for i in 0..inner {
                    let v = d[base + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        argmax[slot] = a;
                    }
                }
            }
        }
        let mut new_shape = shape.to_vec();
        new_shape.remove(axis);
        let value = Tensor::new(new_shape, out)?;
        self.push(
            "max_over_axis",
            value,
            Op::MaxOverAxis {
                x,
                argmax,
                outer,
                axis_len,
                inner,
            },
            &[x],
        )
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("dropout", value, Op::Dropout { x, mask }, &[x])
    }

    /// Mean cross-entropy of `logits: [m, K]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (m, k) = t.dims2()?;
        if labels.len() != m {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if m == 0 {
            return Err(Error::Empty("cross_entropy batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Invalid(format!("label {bad} outside [0, {k})")));
        }
        let mut probs = t.data().to_vec();
        let mut total = 0.0;
        for (r, row) in probs.chunks_mut(k).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let value = Tensor::scalar(total / m as f64);
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Multi-head scaled dot-product attention over the time axis.
    /// `q`, `k`, `v` are `[batch, time, width]`, split into `heads` equal slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() {
            return Err(shape_err("attention", tq, tk));
        }
        if tq.shape() != tv.shape() {
            return Err(shape_err("attention", tq, tv));
        }
        let (batch, time, width) = tq.dims3()?;
        if heads == 0 || width % heads != 0 {
            return Err(Error::Invalid(format!("width {width} not divisible by {heads} heads")));
        }
        let dh = width / heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut probs = vec![0.0; batch * heads * time * time];
        let mut out = vec![0.0; batch * time * width];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * time * time..(b * heads + h + 1) * time * time];
                for i in 0..time {
                    let qi = &qd[(b * time + i) * width + h * dh..][..dh];
                    let row = &mut p[i * time..(i + 1) * time];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kd[(b * time + j) * width + h * dh..][..dh];
                        *s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * inv_sqrt;
                    }
                    softmax_row(row);
                    let oi = &mut out[(b * time + i) * width + h * dh..][..dh];
                    for (j, &pij) in row.iter().enumerate() {
                        let vj = &vd[(b * time + j) * width + h * dh..][..dh];
                        for (o, x) in oi.iter_mut().zip(vj) {
                            *o += pij * x;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, time, width], out)?;
        self.push(
            "attention",
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Attention probabilities recorded by an attention node, laid out
    /// `[batch, heads, time, time]`.
    pub fn attention_probs(&self, var: Var) -> Option<&[f64]> {
        match &self.nodes[var.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Scalar least-squares residual of `targets` regressed on `features`.
    /// The targets are constants; gradient flows into `features` only.
    pub fn least_squares(
        &mut self,
        features: Var,
        targets: &Tensor,
        ridge: Ridge,
        loss: ResidualLoss,
    ) -> Result<(Var, LeastSquaresResult)> {
        let mut layer = LeastSquaresLayer::new(ridge, loss);
        let (result, value) = layer.forward(self.value(features), targets)?;
        let var = self.push(
            "least_squares",
            Tensor::scalar(value),
            Op::LeastSquares {
                features,
                layer: Box::new(layer),
            },
            &[features],
        )?;
        Ok((var, result))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::InvalidShape {
                what: "backward output (must be scalar)",
                shape: self.shape(output).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.and_then(|g| Tensor::new(n.value.shape().to_vec(), g).ok()))
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Reshape(x) => accumulate(&mut grads[x.0], g),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    accumulate_owned(&mut grads[b.0], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    accumulate_owned(&mut grads[a.0], g.iter().zip(vb).map(|(x, y)| x * y).collect());
                }
                if self.needs(*b) {
                    accumulate_owned(&mut grads[b.0], g.iter().zip(va).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(x, s) => accumulate_owned(&mut grads[x.0], g.iter().map(|v| v * s).collect()),
            Op::AddBroadcast(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    let inner = self.value(*b).len().max(1);
                    let mut gb = vec![0.0; inner];
                    for chunk in g.chunks(inner) {
                        for (acc, v) in gb.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    accumulate_owned(&mut grads[b.0], gb);
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let p = tb.shape()[1];
                if self.needs(*a) {
                    let mut ga = vec![0.0; n * k];
                    gemm(n, p, k, 1.0, g, false, tb.data(), true, 0.0, &mut ga);
                    accumulate_owned(&mut grads[a.0], ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * p];
                    gemm(k, n, p, 1.0, ta.data(), true, g, false, 0.0, &mut gb);
                    accumulate_owned(&mut grads[b.0], gb);
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                accumulate_owned(
                    &mut grads[x.0],
                    g.iter().zip(vx).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect(),
                );
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let last = *node.value.shape().last().unwrap_or(&1);
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), out) in g.chunks(last).zip(y.chunks(last)).zip(gx.chunks_mut(last)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate_owned(&mut grads[x.0], gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                accumulate_owned(&mut grads[x.0], vec![g[0]; n]);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let width = *node.value.shape().last().unwrap_or(&1);
                let gain_vals = gain.map(|gv| self.value(gv).data());
                if let Some(b) = bias {
                    if self.needs(*b) {
                        let mut gb = vec![0.0; width];
                        for row in g.chunks(width) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        accumulate_owned(&mut grads[b.0], gb);
                    }
                }
                if let Some(gn) = gain {
                    if self.needs(*gn) {
                        let mut gg = vec![0.0; width];
                        for (row, xr) in g.chunks(width).zip(xhat.chunks(width)) {
                            for ((acc, v), xh) in gg.iter_mut().zip(row).zip(xr) {
                                *acc += v * xh;
                            }
                        }
                        accumulate_owned(&mut grads[gn.0], gg);
                    }
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0; g.len()];
                    let mut dxhat = vec![0.0; width];
                    for (r, ((row, xr), out)) in g
                        .chunks(width)
                        .zip(xhat.chunks(width))
                        .zip(gx.chunks_mut(width))
                        .enumerate()
                    {
                        for (i, d) in dxhat.iter_mut().enumerate() {
                            *d = row[i] * gain_vals.map_or(1.0, |gv| gv[i]);
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / width as f64;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / width as f64;
                        for i in 0..width {
                            out[i] = rstd[r] * (dxhat[i] - mean_d - xr[i] * mean_dx);
                        }
                    }
                    accumulate_owned(&mut grads[x.0], gx);
                }
            }
            Op::Conv1d {
                x,
                weight,
                bias,
                cols,
                kernel,
            } => {
                let (batch, time, c_in) = self.value(*x).dims3()?;
                let c_out = node.value.shape()[2];
                let width = kernel * c_in;
                let rows = batch * time;
                if self.needs(*bias) {
                    let mut gb = vec![0.0; c_out];
                    for row in g.chunks(c_out) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate_owned(&mut grads[bias.0], gb);
                }
                if self.needs(*weight) {
                    let mut gw = vec![0.0; width * c_out];
                    gemm(width, rows, c_out, 1.0, cols, true, g, false, 0.0, &mut gw);
                    accumulate_owned(&mut grads[weight.0], gw);
                }
                if self.needs(*x) {
                    let mut gcols = vec![0.0; rows * width];
                    gemm(rows, c_out, width, 1.0, g, false, self.value(*weight).data(), true, 0.0, &mut gcols);
                    let pad = (kernel - 1) / 2;
                    let mut gx = vec![0.0; batch * time * c_in];
                    for b in 0..batch {
                        for t in 0..time {
                            let row = &gcols[(b * time + t) * width..(b * time + t + 1) * width];
                            for j in 0..*kernel {
                                let src = t as isize + j as isize - pad as isize;
                                if src < 0 || src >= time as isize {
                                    continue;
                                }
                                let s = (b * time + src as usize) * c_in;
                                for (o, v) in gx[s..s + c_in].iter_mut().zip(&row[j * c_in..(j + 1) * c_in]) {
                                    *o += v;
                                }
                            }
                        }
                    }
                    accumulate_owned(&mut grads[x.0], gx);
                }
            }
            Op::MaxOverAxis {
                x,
                argmax,
                outer,
                axis_len,
                inner,
            } => {
                let mut gx = vec![0.0; outer * axis_len * inner];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let slot = o * inner + i;
                        gx[(o * axis_len + argmax[slot]) * inner + i] += g[slot];
                    }
                }
                accumulate_owned(&mut grads[x.0], gx);
            }
            Op::Dropout { x, mask } => {
                accumulate_owned(&mut grads[x.0], g.iter().zip(mask).map(|(a, b)| a * b).collect());
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.value(*logits).shape()[1];
                let m = labels.len();
                let scale = g[0] / m as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gl[r * k + l] -= scale;
                }
                accumulate_owned(&mut grads[logits.0], gl);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (batch, time, width) = self.value(*q).dims3()?;
                let dh = width / heads;
                let inv_sqrt = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let mut dp = vec![0.0; time];
                for b in 0..batch {
                    for h in 0..*heads {
                        let p = &probs[(b * heads + h) * time * time..(b * heads + h + 1) * time * time];
                        for i in 0..time {
                            let go = &g[(b * time + i) * width + h * dh..][..dh];
                            let prow = &p[i * time..(i + 1) * time];
                            for j in 0..time {
                                let off = (b * time + j) * width + h * dh;
                                let vj = &vd[off..off + dh];
                                dp[j] = go.iter().zip(vj).map(|(a, c)| a * c).sum();
                                for (acc, gov) in gv[off..off + dh].iter_mut().zip(go) {
                                    *acc += prow[j] * gov;
                                }
                            }
                            let dot: f64 = dp.iter().zip(prow).map(|(a, c)| a * c).sum();
                            let qoff = (b * time + i) * width + h * dh;
                            for j in 0..time {
                                let ds = prow[j] * (dp[j] - dot) * inv_sqrt;
                                if ds == 0.0 {
                                    continue;
                                }
                                let koff = (b * time + j) * width + h * dh;
                                for c in 0..dh {
                                    gq[qoff + c] += ds * kd[koff + c];
                                    gk[koff + c] += ds * qd[qoff + c];
                                }
                            }
                        }
                    }
                }
                if self.needs(*q) {
                    accumulate_owned(&mut grads[q.0], gq);
                }
                if self.needs(*k) {
                    accumulate_owned(&mut grads[k.0], gk);
                }
                if self.needs(*v) {
                    accumulate_owned(&mut grads[v.0], gv);
                }
            }
            Op::LeastSquares { features, layer } => {
                let gf = layer.backward(g[0])?;
                accumulate_owned(&mut grads[features.0], gf.into_data());
            }
        }
        Ok(())
    }
}
