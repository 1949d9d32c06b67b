//! Dynamic reverse-mode tape.
//!
//! Every forward operation appends a node holding its value and the inputs
//! it was computed from. The tape is rebuilt for each forward pass, so graph
//! topology can change with scene size. [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a reverse topological order because an
//! operation can only reference nodes recorded before it.

use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{gemm_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Maximum(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumAxis(Var, usize),
    LogSumExp(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Reshape(Var),
    TileRows(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded values; a proxy for peak activation memory.
    pub fn memory_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.value.numel() * std::mem::size_of::<f64>())
            .sum()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a stored parameter. Repeated requests for the same id return
    /// the same handle, so weight sharing accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    /// Parameters read by the forward pass so far.
    pub fn accessed_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.params.keys().copied().collect();
        ids.sort();
        ids
    }

    // ----- binary -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            &mut out,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("maximum", a, b, f64::max, Op::Maximum(a, b))
    }

    /// `a (m×n) + bias (1×n)`, the bias repeated on every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let tb = self.value(bias);
        if tb.numel() != n || tb.shape().iter().rev().skip(1).any(|&d| d != 1) {
            return Err(Error::shape("add_bias", self.shape(a), self.shape(bias)));
        }
        let b = tb.data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddBias(a, bias)))
    }

    // ----- unary -----

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Add a constant scalar to every element.
    pub fn shift(&mut self, a: Var, offset: f64) -> Var {
        self.map(a, |x| x + offset, Op::Shift(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self
            .value(a)
            .data()
            .iter()
            .find(|&&x| x <= 0.0 || x.is_nan())
        {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.map(a, f64::ln, Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    // ----- reductions -----

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (outer, n, inner) = ta.axis_split(axis)?;
        let src = ta.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let shape = keepdim(ta.shape(), axis);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis(a, axis)))
    }

    /// Max-shifted log-sum-exp along `axis`, keeping it with length 1.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (outer, n, inner) = ta.axis_split(axis)?;
        let src = ta.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| src[(o * n + k) * inner + i];
                out[o * inner + i] = lse((0..n).map(at));
            }
        }
        let shape = keepdim(ta.shape(), axis);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSumExp(a, axis)))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ls = log_softmax_values(self.value(a), axis)?;
        let value = Tensor::new(
            ls.shape().to_vec(),
            ls.data().iter().map(|x| x.exp()).collect(),
        )?;
        Ok(self.push(value, Op::Softmax(a, axis)))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = log_softmax_values(self.value(a), axis)?;
        Ok(self.push(value, Op::LogSoftmax(a, axis)))
    }

    // ----- structural -----

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Contract(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis)))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (outer, n, inner) = ta.axis_split(axis)?;
        if start + len > n {
            return Err(Error::Contract(format!(
                "slice {start}..{} out of range for axis {axis} of {:?}",
                start + len,
                ta.shape()
            )));
        }
        let src = ta.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Slice {
                src: a,
                axis,
                start,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Repeat a `1 × n` row `m` times into an `m × n` matrix.
    pub fn tile_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let (r, n) = self.value(a).dims2()?;
        if r != 1 {
            return Err(Error::shape("tile_rows", self.shape(a), &[1, n]));
        }
        let row = self.value(a).data();
        let data = row.repeat(m);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::TileRows(a)))
    }

    // ----- reverse pass -----

    /// Propagate `d loss / d node` for every node recorded up to `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2()?;
                let n = tb.shape()[1];
                // dA = G · Bᵀ
                let mut da = vec![0.0; m * k];
                gemm_acc(
                    m,
                    n,
                    k,
                    gd,
                    n as isize,
                    1,
                    tb.data(),
                    1,
                    n as isize,
                    &mut da,
                );
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * n];
                gemm_acc(
                    k,
                    m,
                    n,
                    ta.data(),
                    1,
                    k as isize,
                    gd,
                    n as isize,
                    1,
                    &mut db,
                );
                accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, map_like(g, |x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip_like(g, tb, |gi, bi| gi * bi));
                accumulate(grads, *b, zip_like(g, ta, |gi, ai| gi * ai));
            }
            Op::Maximum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(g.shape());
                let mut gb = Tensor::zeros(g.shape());
                for i in 0..gd.len() {
                    if ta.data()[i] >= tb.data()[i] {
                        ga.data_mut()[i] = gd[i];
                    } else {
                        gb.data_mut()[i] = gd[i];
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddBias(a, bias) => {
                accumulate(grads, *a, g.clone());
                let tb = self.value(*bias);
                let n = tb.numel();
                let mut gb = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (s, x) in gb.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                accumulate(grads, *bias, Tensor::new(tb.shape().to_vec(), gb)?);
            }
            Op::Scale(a, f) => accumulate(grads, *a, map_like(g, |x| x * f)),
            Op::Shift(a) => accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_like(g, y, |gi, s| gi * s * (1.0 - s))),
            Op::Tanh(a) => accumulate(grads, *a, zip_like(g, y, |gi, t| gi * (1.0 - t * t))),
            Op::Exp(a) => accumulate(grads, *a, zip_like(g, y, |gi, e| gi * e)),
            Op::Log(a) => {
                accumulate(grads, *a, zip_like(g, self.value(*a), |gi, x| gi / x));
            }
            Op::Square(a) => {
                accumulate(grads, *a, zip_like(g, self.value(*a), |gi, x| 2.0 * gi * x));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let pass = |gi: f64, x: f64| if x >= lo && x <= hi { gi } else { 0.0 };
                accumulate(grads, *a, zip_like(g, self.value(*a), pass));
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                accumulate(grads, *a, Tensor::filled(ta.shape(), gd[0]));
            }
            Op::SumAxis(a, axis) => {
                let ta = self.value(*a);
                let out = broadcast_axis(ta, *axis, |o, _, i, inner| gd[o * inner + i])?;
                accumulate(grads, *a, out);
            }
            Op::LogSumExp(a, axis) => {
                let ta = self.value(*a);
                let yd = y.data();
                let src = ta.data();
                let out = broadcast_axis(ta, *axis, |o, k, i, inner| {
                    let n = ta.shape()[*axis];
                    let x = src[(o * n + k) * inner + i];
                    gd[o * inner + i] * (x - yd[o * inner + i]).exp()
                })?;
                accumulate(grads, *a, out);
            }
            Op::Softmax(a, axis) => {
                // dx = y ⊙ (g − Σ g⊙y)
                let gy = zip_like(g, y, |gi, yi| gi * yi);
                let sums = axis_sums(&gy, *axis)?;
                let n = y.shape()[*axis];
                let out = broadcast_axis(y, *axis, |o, k, i, inner| {
                    let at = (o * n + k) * inner + i;
                    y.data()[at] * (gd[at] - sums[o * inner + i])
                })?;
                accumulate(grads, *a, out);
            }
            Op::LogSoftmax(a, axis) => {
                // dx = g − softmax ⊙ Σ g
                let sums = axis_sums(g, *axis)?;
                let n = y.shape()[*axis];
                let out = broadcast_axis(y, *axis, |o, k, i, inner| {
                    let at = (o * n + k) * inner + i;
                    gd[at] - y.data()[at].exp() * sums[o * inner + i]
                })?;
                accumulate(grads, *a, out);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = y.axis_split(*axis)?;
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let len = tp.shape()[*axis];
                    let mut data = Vec::with_capacity(tp.numel());
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        data.extend_from_slice(&gd[from..from + len * inner]);
                    }
                    accumulate(grads, p, Tensor::new(tp.shape().to_vec(), data)?);
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let ts = self.value(*src);
                let (outer, n, inner) = ts.axis_split(*axis)?;
                let len = y.shape()[*axis];
                let mut out = Tensor::zeros(ts.shape());
                let od = out.data_mut();
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    let from = o * len * inner;
                    od[to..to + len * inner].copy_from_slice(&gd[from..from + len * inner]);
                }
                accumulate(grads, *src, out);
            }
            Op::Reshape(a) => {
                let ta = self.value(*a);
                accumulate(grads, *a, g.clone().reshaped(ta.shape().to_vec())?);
            }
            Op::TileRows(a) => {
                let n = self.value(*a).numel();
                let mut sums = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (s, x) in sums.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                accumulate(grads, *a, Tensor::new(vec![1, n], sums)?);
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if it
    /// influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients sized for `store`.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::empty(store.len());
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                *out.slot_mut(id) = Some(g.clone());
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-sum-exp of a sequence.
pub fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

fn log_softmax_values(t: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = t.axis_split(axis)?;
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let z = lse((0..n).map(|k| src[at(k)]));
            for k in 0..n {
                out[at(k)] = src[at(k)] - z;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

fn axis_sums(t: &Tensor, axis: usize) -> Result<Vec<f64>> {
    let (outer, n, inner) = t.axis_split(axis)?;
    let src = t.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                out[o * inner + i] += src[(o * n + k) * inner + i];
            }
        }
    }
    Ok(out)
}

/// Tensor shaped like `like`, filled by `f(outer, k, inner_idx, inner)`.
fn broadcast_axis(
    like: &Tensor,
    axis: usize,
    f: impl Fn(usize, usize, usize, usize) -> f64,
) -> Result<Tensor> {
    let (outer, n, inner) = like.axis_split(axis)?;
    let mut out = vec![0.0; like.numel()];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                out[(o * n + k) * inner + i] = f(o, k, i, inner);
            }
        }
    }
    Tensor::new(like.shape().to_vec(), out)
}

fn map_like(g: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = g.data().iter().map(|&x| f(x)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape")
}

fn zip_like(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(other.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}
