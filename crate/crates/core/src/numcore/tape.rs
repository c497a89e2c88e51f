//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends a node to the [`Tape`]. Nodes are stored in
//! creation order, so the arena is already topologically sorted and the
//! backward pass is a single reverse sweep. A node whose inputs are all
//! constants is stored as a constant leaf and never revisited.

use crate::error::{Error, Result};
use crate::numcore::tensor::{matmul_into, numel, split_axis, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var, usize),
    SumAll(Var),
    SqNorm(Var),
    Diag(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Which side of zero every input entry of a rectifier sits on, in
    /// recording order. Two evaluations with equal patterns lie on the same
    /// smooth piece of the computation. Only differentiable nodes keep their
    /// operation, so rectifiers over constants are not listed.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => {
                    Some(self.nodes[a.0].value.data().iter().map(|&x| x > 0.0))
                }
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.record(value, op, &[a])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.record(value, op, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Op::Powf(a, p), |x| x.powf(p))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Powf(a, 2.0), |x| x * x)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.shape().len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} for shape {:?}", t.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * dim + d) * inner + i;
                let max = (0..dim)
                    .map(|d| src[idx(d)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for d in 0..dim {
                    let e = (src[idx(d)] - max).exp();
                    out[idx(d)] = e;
                    total += e;
                }
                for d in 0..dim {
                    out[idx(d)] /= total;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.record(value, Op::Softmax(a, axis), &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} for shape {base:?}"),
            ));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(k, (x, y))| k == axis || x == y);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("{base:?} vs {s:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.record(value, Op::Concat(inputs.to_vec(), axis), inputs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.record(value, Op::Reshape(a), &[a]))
    }

    /// Reorders axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rank = t.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim(
                "permute",
                format!("{perm:?} for shape {:?}", t.shape()),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
        let mut out = vec![0.0; t.len()];
        for_each_permuted(t.shape(), perm, |dst, src| out[dst] = t.data()[src]);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.record(value, Op::Permute(a, perm.to_vec()), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.permute(a, &[1, 0])
    }

    /// Keeps indices `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.shape().len() || start >= end || end > t.shape()[axis] {
            return Err(Error::dim(
                "slice",
                format!("axis {axis} range {start}..{end} for shape {:?}", t.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&t.data()[(o * dim + start) * inner..(o * dim + end) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = end - start;
        let value = Tensor::new(shape, out)?;
        Ok(self.record(
            value,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            &[a],
        ))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.shape().len() {
            return Err(Error::dim(
                "sum",
                format!("axis {axis} for shape {:?}", t.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                for i in 0..inner {
                    out[o * inner + i] += t.data()[(o * dim + d) * inner + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, out)?;
        Ok(self.record(value, Op::Sum(a, axis), &[a]))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .value(a)
            .shape()
            .get(axis)
            .ok_or_else(|| Error::dim("mean", format!("axis {axis}")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.record(value, Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Squared L2 norm of all entries.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().map(|x| x * x).sum());
        self.record(value, Op::SqNorm(a), &[a])
    }

    /// Square diagonal matrix from the entries of `a`.
    pub fn diag(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len();
        let mut out = Tensor::zeros(&[n, n]);
        for (i, &x) in t.data().iter().enumerate() {
            out.set(i, i, x);
        }
        self.record(out, Op::Diag(a), &[a])
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lt.shape()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let elementwise = |a: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let x = self.value(a);
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(*a) {
                    let bt = tb.transpose();
                    let mut ga = vec![0.0; m * k];
                    matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga).expect("shape"));
                }
                if self.requires_grad(*b) {
                    let at = ta.transpose();
                    let mut gb = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip_map(g, tb, |gv, bv| gv * bv));
                self.accumulate(grads, *b, zip_map(g, ta, |gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip_map(g, tb, |gv, bv| gv / bv));
                let gb = Tensor::new(
                    tb.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(ta.data())
                        .zip(tb.data())
                        .map(|((&gv, &av), &bv)| -gv * av / (bv * bv))
                        .collect(),
                )
                .expect("shape");
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|x| k * x)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = elementwise(*a, &|x, _, gv| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = elementwise(*a, &|x, _, gv| if x > 0.0 { gv } else { slope * gv });
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = elementwise(*a, &|_, yv, gv| gv * (1.0 - yv * yv));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = elementwise(*a, &|_, yv, gv| gv * yv);
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = elementwise(*a, &|x, _, gv| gv / x);
                self.accumulate(grads, *a, d);
            }
            Op::Powf(a, p) => {
                let d = elementwise(*a, &|x, _, gv| gv * p * x.powf(p - 1.0));
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a, axis) => {
                let (outer, dim, inner) = split_axis(y.shape(), *axis);
                let mut out = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |d: usize| (o * dim + d) * inner + i;
                        let dot: f64 = (0..dim).map(|d| g.data()[idx(d)] * y.data()[idx(d)]).sum();
                        for d in 0..dim {
                            out[idx(d)] = y.data()[idx(d)] * (g.data()[idx(d)] - dot);
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *a,
                    Tensor::new(y.shape().to_vec(), out).expect("shape"),
                );
            }
            Op::Concat(inputs, axis) => {
                let (outer, total, inner) = split_axis(y.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let shape = self.value(*v).shape().to_vec();
                    let dim = shape[*axis];
                    let mut part = Vec::with_capacity(outer * dim * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        part.extend_from_slice(&g.data()[base..base + dim * inner]);
                    }
                    offset += dim;
                    self.accumulate(grads, *v, Tensor::new(shape, part).expect("shape"));
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, g.clone().reshape(shape).expect("shape"));
            }
            Op::Permute(a, perm) => {
                let x = self.value(*a);
                let mut out = vec![0.0; x.len()];
                for_each_permuted(x.shape(), perm, |dst, src| out[src] += g.data()[dst]);
                self.accumulate(
                    grads,
                    *a,
                    Tensor::new(x.shape().to_vec(), out).expect("shape"),
                );
            }
            Op::Slice { input, axis, start } => {
                let x = self.value(*input);
                let (outer, dim, inner) = split_axis(x.shape(), *axis);
                let width = y.shape()[*axis];
                let mut out = vec![0.0; x.len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * width * inner;
                    out[dst..dst + width * inner]
                        .copy_from_slice(&g.data()[src..src + width * inner]);
                }
                self.accumulate(
                    grads,
                    *input,
                    Tensor::new(x.shape().to_vec(), out).expect("shape"),
                );
            }
            Op::Sum(a, axis) => {
                let x = self.value(*a);
                let (outer, dim, inner) = split_axis(x.shape(), *axis);
                let mut out = vec![0.0; x.len()];
                for o in 0..outer {
                    for d in 0..dim {
                        for i in 0..inner {
                            out[(o * dim + d) * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *a,
                    Tensor::new(x.shape().to_vec(), out).expect("shape"),
                );
            }
            Op::SumAll(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()));
            }
            Op::SqNorm(a) => {
                let gv = g.item();
                let d = self.value(*a).map(|x| 2.0 * x * gv);
                self.accumulate(grads, *a, d);
            }
            Op::Diag(a) => {
                let x = self.value(*a);
                let n = x.len();
                let data = (0..n).map(|i| g.at(i, i)).collect();
                self.accumulate(
                    grads,
                    *a,
                    Tensor::new(x.shape().to_vec(), data).expect("shape"),
                );
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(b.shape().to_vec(), data).expect("shape")
}

/// Calls `f(dst, src)` for every element, where `dst` is the flat index in
/// the permuted output and `src` the flat index in the input.
fn for_each_permuted(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for k in (0..rank.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let total = numel(shape);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(dst, src);
        for k in (0..rank).rev() {
            idx[k] += 1;
            src += src_strides[k];
            if idx[k] < out_shape[k] {
                break;
            }
            src -= src_strides[k] * out_shape[k];
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let m = t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let i = tape.constant(Tensor::eye(3));
        let mv = tape.constant(m.clone());
        let out = tape.matmul(i, mv).unwrap();
        assert_eq!(tape.value(out), &m);
    }

    #[test]
    fn activation_pattern_tracks_rectifier_inputs() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let e = tape.exp(x);
        tape.relu(x);
        tape.leaky_relu(e, 0.2);
        assert_eq!(
            tape.activation_pattern(),
            vec![false, false, true, true, true, true]
        );
    }

    #[test]
    fn matmul_shape_error_names_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[2.5, 2.5, 2.5]));
        let s = tape.softmax(x, 0).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        let y = tape.leaky_relu(x, 0.2);
        assert!((tape.value(y).item() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn relu_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[-1.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let unused = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[3]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_are_not_recorded_as_ops() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.exp(a);
        assert!(!tape.requires_grad(b));
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let mut tape = Tape::new();
        let m = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let v = tape.constant(m.clone());
        let p = tape.transpose(v).unwrap();
        assert_eq!(tape.value(p), &m.transpose());
    }

    #[test]
    fn permute_three_axes() {
        let mut tape = Tape::new();
        let x =
            tape.constant(Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        let out = tape.value(p);
        assert_eq!(out.shape(), &[4, 2, 3]);
        // out[k, i, j] = in[i, j, k]
        assert_eq!(
            out.data()[(3 * 2 + 1) * 3 + 2],
            ((1 * 3 + 2) * 4 + 3) as f64
        );
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t(&[2, 1], &[5., 6.]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 2., 5., 3., 4., 6.]);
        let back = tape.slice(c, 1, 2, 3).unwrap();
        assert_eq!(tape.value(back).data(), &[5., 6.]);
    }
}
