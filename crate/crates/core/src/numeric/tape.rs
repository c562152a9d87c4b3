//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the tape, so nodes are already in
//! topological order and the backward pass is a single reverse sweep that
//! visits each node at most once.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Real, Tensor};

/// Gather index that produces a zero row (used for padding).
pub const ZERO_ROW: usize = usize::MAX;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Gather {
        src: Var,
        index: Arc<[usize]>,
    },
    ScatterAdd {
        src: Var,
        index: Arc<[usize]>,
        weights: Option<Arc<[T]>>,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxCe {
        logits: Var,
        labels: Arc<[usize]>,
    },
    SigmoidBce {
        logits: Var,
        targets: Arc<[T]>,
    },
    GaussianKl {
        mu: Var,
        logvar: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    /// Op-specific forward cache (softmax probabilities).
    aux: Option<Vec<T>>,
}

/// Computation graph recorded during a forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    inputs: BTreeMap<String, Var>,
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var> {
        check_finite(name, value.data())?;
        Ok(self.push(value, op, needs_grad))
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Named constant input.
    pub fn input(&mut self, name: &str, t: Tensor<T>) -> Var {
        let v = self.constant(t);
        self.inputs.insert(name.to_string(), v);
        v
    }

    /// Named differentiable leaf that is not backed by a [`ParamStore`].
    pub fn leaf(&mut self, name: &str, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Binds a stored parameter. Repeated binds of one name share a node so
    /// gradients of shared weights accumulate.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        Ok(self.leaf(name, t))
    }

    pub fn input_var(&self, name: &str) -> Option<Var> {
        self.inputs.get(name).copied()
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let g = self.grad_of(&[a, b]);
        self.push_checked(name, out, op, g)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * k);
        let g = self.grad_of(&[a]);
        self.push_checked("scale", out, Op::Scale(a, k), g)
    }

    /// `a[i, :] + bias` for `a` viewed as `[rows, c]` and `bias` with `c` elements.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let c = va.cols();
        if vb.len() != c || va.shape().len() < 2 {
            return Err(Error::shape("add_bias", va.shape(), vb.shape()));
        }
        let b = vb.data();
        let data = va
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let g = self.grad_of(&[a, bias]);
        self.push_checked("add_bias", out, Op::AddBias(a, bias), g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape("matmul", va.shape(), vb.shape()));
        }
        let out = va.matmul(vb)?;
        let g = self.grad_of(&[a, b]);
        self.push_checked("matmul", out, Op::MatMul(a, b), g)
    }

    /// Row gather: `out[i] = src[index[i]]`, or zeros for [`ZERO_ROW`].
    pub fn gather(&mut self, src: Var, index: Arc<[usize]>) -> Result<Var> {
        let vs = self.value(src);
        let (m, c) = (vs.rows(), vs.cols());
        let mut data = vec![T::zero(); index.len() * c];
        for (i, &j) in index.iter().enumerate() {
            if j == ZERO_ROW {
                continue;
            }
            if j >= m {
                return Err(Error::Index {
                    op: "gather",
                    index: j,
                    len: m,
                });
            }
            data[i * c..(i + 1) * c].copy_from_slice(&vs.data()[j * c..(j + 1) * c]);
        }
        let mut shape = vs.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = index.len();
        let out = Tensor::new(shape, data)?;
        let g = self.grad_of(&[src]);
        self.push_checked("gather", out, Op::Gather { src, index }, g)
    }

    /// Weighted row scatter-add into `rows` output rows:
    /// `out[index[i]] += weights[i] · src[i]` (weight 1 when absent).
    pub fn scatter_add(
        &mut self,
        src: Var,
        index: Arc<[usize]>,
        weights: Option<Arc<[T]>>,
        rows: usize,
    ) -> Result<Var> {
        let vs = self.value(src);
        let c = vs.cols();
        if vs.rows() != index.len() || weights.as_ref().is_some_and(|w| w.len() != index.len()) {
            return Err(Error::shape("scatter_add", vs.shape(), &[index.len()]));
        }
        let mut data = vec![T::zero(); rows * c];
        for (i, &j) in index.iter().enumerate() {
            if j == ZERO_ROW {
                continue;
            }
            if j >= rows {
                return Err(Error::Index {
                    op: "scatter_add",
                    index: j,
                    len: rows,
                });
            }
            let w = weights.as_ref().map_or(T::one(), |w| w[i]);
            let s = &vs.data()[i * c..(i + 1) * c];
            for (o, &x) in data[j * c..(j + 1) * c].iter_mut().zip(s) {
                *o += w * x;
            }
        }
        let mut shape = vs.shape().to_vec();
        shape[0] = rows;
        let out = Tensor::new(shape, data)?;
        let g = self.grad_of(&[src]);
        self.push_checked(
            "scatter_add",
            out,
            Op::ScatterAdd {
                src,
                index,
                weights,
            },
            g,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(out, Op::Reshape(a), g))
    }

    /// Column-wise concatenation of tensors viewed as `[rows, cols]`.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::shape("concat", &[], &[])),
        };
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::shape("concat", &[rows], self.value(p).shape()));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let g = self.grad_of(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), g))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).map(f);
        let g = self.grad_of(&[a]);
        self.push_checked(name, out, op, g)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, T::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, T::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, T::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let g = self.grad_of(&[a]);
        self.push_checked("sum", out, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = T::lit(v.len().max(1) as f64);
        let out = Tensor::scalar(v.sum() / n);
        let g = self.grad_of(&[a]);
        self.push_checked("mean", out, Op::Mean(a), g)
    }

    /// Mean softmax cross-entropy of `[n, classes]` logits against labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        let v = self.value(logits);
        let (n, c) = (v.rows(), v.cols());
        if labels.len() != n {
            return Err(Error::shape("softmax_cross_entropy", v.shape(), &[labels.len()]));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for i in 0..n {
            let row = &v.data()[i * c..(i + 1) * c];
            let label = labels[i];
            if label >= c {
                return Err(Error::Index {
                    op: "softmax_cross_entropy",
                    index: label,
                    len: c,
                });
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            total += z.ln() + max - row[label];
        }
        let mean = if n == 0 {
            T::zero()
        } else {
            total / T::lit(n as f64)
        };
        let g = self.grad_of(&[logits]);
        let var = self.push_checked(
            "softmax_cross_entropy",
            Tensor::scalar(mean),
            Op::SoftmaxCe { logits, labels },
            g,
        )?;
        self.nodes[var.0].aux = Some(probs);
        Ok(var)
    }

    /// Mean binary cross-entropy of logits against targets in `[0, 1]`.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Arc<[T]>) -> Result<Var> {
        let v = self.value(logits);
        if v.len() != targets.len() {
            return Err(Error::shape("sigmoid_bce", v.shape(), &[targets.len()]));
        }
        let mut total = T::zero();
        for (&x, &y) in v.data().iter().zip(targets.iter()) {
            total += x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p();
        }
        let mean = if v.is_empty() {
            T::zero()
        } else {
            total / T::lit(v.len() as f64)
        };
        let g = self.grad_of(&[logits]);
        self.push_checked(
            "sigmoid_bce",
            Tensor::scalar(mean),
            Op::SigmoidBce { logits, targets },
            g,
        )
    }

    /// Mean over elements of `KL(N(mu, exp(logvar)) || N(0, 1))`.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (vm, vl) = (self.value(mu), self.value(logvar));
        if vm.shape() != vl.shape() {
            return Err(Error::shape("gaussian_kl", vm.shape(), vl.shape()));
        }
        let half = T::lit(0.5);
        let total: T = vm
            .data()
            .iter()
            .zip(vl.data())
            .map(|(&m, &l)| half * (m * m + l.exp() - T::one() - l))
            .sum();
        let mean = if vm.is_empty() {
            T::zero()
        } else {
            total / T::lit(vm.len() as f64)
        };
        let g = self.grad_of(&[mu, logvar]);
        self.push_checked(
            "gaussian_kl",
            Tensor::scalar(mean),
            Op::GaussianKl { mu, logvar },
            g,
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| {
                    for (o, &x) in s.iter_mut().zip(g) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| {
                    for ((o, &x), &y) in s.iter_mut().zip(g).zip(vb) {
                        *o += x * y;
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for ((o, &x), &y) in s.iter_mut().zip(g).zip(va) {
                        *o += x * y;
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, |s| {
                    for (o, &x) in s.iter_mut().zip(g) {
                        *o += x * *k;
                    }
                });
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                let c = self.value(*b).len();
                self.accumulate(grads, *b, |s| {
                    for row in g.chunks(c.max(1)) {
                        add_into(s, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = G · Bᵀ, dB = Aᵀ · G
                self.accumulate(grads, *a, |s| T::gemm(m, n, k, g, false, vb.data(), true, s, true));
                self.accumulate(grads, *b, |s| T::gemm(k, m, n, va.data(), true, g, false, s, true));
            }
            Op::Gather { src, index } => {
                let c = self.value(*src).cols();
                self.accumulate(grads, *src, |s| {
                    for (i, &j) in index.iter().enumerate() {
                        if j != ZERO_ROW {
                            add_into(&mut s[j * c..(j + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                });
            }
            Op::ScatterAdd {
                src,
                index,
                weights,
            } => {
                let c = self.value(*src).cols();
                self.accumulate(grads, *src, |s| {
                    for (i, &j) in index.iter().enumerate() {
                        if j == ZERO_ROW {
                            continue;
                        }
                        let w = weights.as_ref().map_or(T::one(), |w| w[i]);
                        for (o, &x) in s[i * c..(i + 1) * c].iter_mut().zip(&g[j * c..(j + 1) * c]) {
                            *o += w * x;
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |s| add_into(s, g)),
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |s| {
                        for r in 0..rows {
                            add_into(
                                &mut s[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |s| mul_add_into(s, g, y));
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
                        *o += gi / xi;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |s| {
                    for ((o, &gi), &yi) in s.iter_mut().zip(g).zip(y) {
                        *o += gi * (T::one() - yi * yi);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |s| {
                    for ((o, &gi), &yi) in s.iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (T::one() - yi);
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|o| *o += g0));
            }
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).len().max(1) as f64);
                let g0 = g[0] / n;
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|o| *o += g0));
            }
            Op::SoftmaxCe { logits, labels } => {
                let probs = node.aux.as_ref().expect("softmax cache");
                let c = self.value(*logits).cols();
                let n = labels.len();
                if n == 0 {
                    return;
                }
                let g0 = g[0] / T::lit(n as f64);
                self.accumulate(grads, *logits, |s| {
                    for i in 0..n {
                        for k in 0..c {
                            let target = if k == labels[i] { T::one() } else { T::zero() };
                            s[i * c + k] += g0 * (probs[i * c + k] - target);
                        }
                    }
                });
            }
            Op::SigmoidBce { logits, targets } => {
                let x = self.value(*logits).data();
                if x.is_empty() {
                    return;
                }
                let g0 = g[0] / T::lit(x.len() as f64);
                self.accumulate(grads, *logits, |s| {
                    for ((o, &xi), &yi) in s.iter_mut().zip(x).zip(targets.iter()) {
                        *o += g0 * (sigmoid(xi) - yi);
                    }
                });
            }
            Op::GaussianKl { mu, logvar } => {
                let (vm, vl) = (self.value(*mu).data(), self.value(*logvar).data());
                if vm.is_empty() {
                    return;
                }
                let g0 = g[0] / T::lit(vm.len() as f64);
                let half = T::lit(0.5);
                self.accumulate(grads, *mu, |s| {
                    for (o, &m) in s.iter_mut().zip(vm) {
                        *o += g0 * m;
                    }
                });
                self.accumulate(grads, *logvar, |s| {
                    for (o, &l) in s.iter_mut().zip(vl) {
                        *o += g0 * half * (l.exp() - T::one());
                    }
                });
            }
        }
    }

    /// `∂loss/∂p` for each named parameter; zeros for parameters the loss
    /// does not depend on.
    pub fn gradient<S: AsRef<str>>(
        &self,
        loss: Var,
        names: &[S],
    ) -> Result<BTreeMap<String, Tensor<T>>> {
        let grads = self.backward(loss)?;
        names
            .iter()
            .map(|name| {
                let name = name.as_ref();
                let v = self
                    .params
                    .get(name)
                    .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
                Ok((name.to_string(), grads.get_or_zeros(self, *v)))
            })
            .collect()
    }

    /// Gradients for every parameter bound on this tape.
    pub fn param_gradients(&self, loss: Var) -> Result<BTreeMap<String, Tensor<T>>> {
        let grads = self.backward(loss)?;
        Ok(self
            .params
            .iter()
            .map(|(name, &v)| (name.clone(), grads.get_or_zeros(self, v)))
            .collect())
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, tape: &Tape<T>, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(tape.value(v).shape().to_vec(), g.clone()).expect("gradient shape"))
    }

    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(tape, v)
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

#[inline]
fn mul_add_into<T: Real>(dst: &mut [T], a: &[T], b: &[T]) {
    for ((o, &x), &y) in dst.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}
