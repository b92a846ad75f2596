//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as a node; [`Var`] is a handle into
//! it. Nodes are appended after their inputs, so reverse insertion order is a
//! valid topological order for the backward sweep. Gradients of leaves
//! accumulate across backward calls until [`Graph::zero_grad`].
//!
//! Ops operate on the last dimension where that matters (softmax, layer
//! norm, L2 normalization) and treat everything before it as rows.
//! Broadcasting is limited to adding a tensor whose shape is a suffix of the
//! other operand's shape.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim().max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        last_dim: bool,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Accumulated gradient of a leaf, if a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `a · b` where `a` is `[..., m, k]` and `b` is `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k;
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let out = matmul_raw(&self.value(a).data, &self.value(b).data, m, k, n);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; `b` may have a shape equal to a suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape(format!("add {sa:?} + {sb:?}")));
        }
        let bv = &self.value(b).data;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % bv.len()])
            .collect();
        let shape = sa.to_vec();
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul {:?} * {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).numel() == 0 {
            return Err(Error::Shape("log of empty tensor".into()));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// Division by a scalar constant.
    pub fn div_scalar(&mut self, x: Var, c: f64) -> Var {
        self.scale(x, 1.0 / c)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        let rg = self.tracked(&[x]);
        self.push(out, op, rg)
    }

    /// Softmax over the last dimension, stabilized by subtracting the row max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if d == 0 || t.shape.is_empty() {
            return Err(Error::Shape("softmax over empty dimension".into()));
        }
        let mut data = t.data.clone();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = t.shape.clone();
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::Softmax(x), rg))
    }

    /// `log(softmax(x))` over the last dimension, computed as `x - logsumexp(x)`.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if d == 0 || t.shape.is_empty() {
            return Err(Error::Shape("log_softmax over empty dimension".into()));
        }
        let mut data = t.data.clone();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = t.shape.clone();
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::LogSoftmax(x), rg))
    }

    /// Layer normalization over the last dimension with learnable scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] || d == 0 {
            return Err(Error::Shape(format!(
                "layer_norm over {:?} with gamma {:?} beta {:?}",
                self.shape(x),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let t = self.value(x);
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut normalized = Vec::with_capacity(t.numel());
        let mut rstd = Vec::with_capacity(t.rows());
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * r;
                normalized.push(xh);
                data.push(xh * g[j] + b[j]);
            }
        }
        let shape = t.shape.clone();
        let rg = self.tracked(&[x, gamma, beta]);
        Ok(self.push(
            Tensor { shape, data },
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            },
            rg,
        ))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::Shape(format!("mean over axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = &self.value(x).data;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        for v in &mut data {
            *v /= len as f64;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor { shape: out_shape, data }, Op::MeanAxis { x, axis }, rg))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::Shape(format!("transpose of {shape:?}")));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let data = transpose_raw(&self.value(x).data, r, c);
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape.swap(n - 2, n - 1);
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor { shape: out_shape, data }, Op::Transpose(x), rg))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::Shape(format!("reshape {:?} to {shape:?}", t.shape)));
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Rows of `table` (`[v, d]`) selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::Shape(format!("embedding table {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::TokenOutOfRange { id: bad, vocab: v });
        }
        let src = &self.value(table).data;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i as usize * d..(i as usize + 1) * d]);
        }
        let rg = self.tracked(&[table]);
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout: zeroes elements with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. Identity when `train` is false.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !train || rate == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = zip_map(&t.data, &mask, |a, m| a * m);
        let shape = t.shape.clone();
        let rg = self.tracked(&[x]);
        self.push(Tensor { shape, data }, Op::Dropout { x, mask }, rg)
    }

    /// Concatenation along the first dimension.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let s = self.shape(v);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::Shape(format!("concat {s:?} with tail {tail:?}")));
            }
            rows += s[0];
            data.extend_from_slice(&self.value(v).data);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = self.tracked(inputs);
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                last_dim: false,
            },
            rg,
        ))
    }

    /// Concatenation along the last dimension.
    pub fn concat_last(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let lead = self.shape(*first).to_vec();
        if lead.is_empty() {
            return Err(Error::Shape("concat_last of scalar".into()));
        }
        let lead = &lead[..lead.len() - 1];
        let rows: usize = lead.iter().product();
        let mut width = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != lead.len() + 1 || s[..lead.len()] != *lead {
                return Err(Error::Shape(format!("concat_last {s:?} with lead {lead:?}")));
            }
            width += s[s.len() - 1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &v in inputs {
                data.extend_from_slice(self.value(v).row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let rg = self.tracked(inputs);
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                last_dim: true,
            },
            rg,
        ))
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if start >= end || end > d || t.shape.is_empty() {
            return Err(Error::Shape(format!("slice {start}..{end} of {:?}", t.shape)));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for row in t.data.chunks(d) {
            data.extend_from_slice(&row[start..end]);
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = end - start;
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::SliceLast { x, start }, rg))
    }

    /// Divides every row (last dimension) by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut norms = Vec::with_capacity(t.rows());
        let mut data = Vec::with_capacity(t.numel());
        for (i, row) in t.data.chunks(d).enumerate() {
            // Scale by the largest magnitude first so huge entries do not overflow.
            let big = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let n = if big > 0.0 {
                big * row.iter().map(|v| (v / big).powi(2)).sum::<f64>().sqrt()
            } else {
                0.0
            };
            if n < 1e-12 {
                return Err(Error::ZeroNorm { row: i });
            }
            norms.push(n);
            data.extend(row.iter().map(|v| v / n));
        }
        let shape = t.shape.clone();
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::L2Normalize { x, norms }, rg))
    }

    /// Replaces elements where `mask` is true by `value`; those positions
    /// receive no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::Shape(format!(
                "mask of {} for tensor of {}",
                mask.len(),
                t.numel()
            )));
        }
        let data = t
            .data
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let shape = t.shape.clone();
        let rg = self.tracked(&[x]);
        Ok(self.push(
            Tensor { shape, data },
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Picks element `index[i]` from row `i`, giving a vector of length `rows`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if index.len() != t.rows() || index.iter().any(|&j| j >= d) {
            return Err(Error::Shape("gather index does not fit rows".into()));
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(i, &j)| t.data[i * d + j])
            .collect();
        let rg = self.tracked(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![index.len()],
                data,
            },
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.tracked(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_with(loss, vec![1.0])
    }

    /// Back-propagates an explicit upstream gradient for `out`.
    pub fn backward_with(&mut self, out: Var, seed: Vec<f64>) -> Result<()> {
        if seed.len() != self.value(out).numel() {
            return Err(Error::Shape("seed gradient does not match output".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value.data;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (k, n) = (tb.shape[0], tb.shape[1]);
                let m = ta.numel() / k;
                if self.nodes[a.0].requires_grad {
                    let bt = transpose_raw(&tb.data, k, n);
                    send(*a, matmul_raw(g, &bt, m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose_raw(&ta.data, m, k);
                    send(*b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                let nb = self.value(*b).numel();
                let mut gb = vec![0.0; nb];
                for (idx, v) in g.iter().enumerate() {
                    gb[idx % nb] += v;
                }
                send(*b, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                send(*a, zip_map(g, vb, |x, y| x * y));
                send(*b, zip_map(g, va, |x, y| x * y));
            }
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                send(*x, zip_map(g, xv, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Softmax(x) => {
                let d = node.value.last_dim();
                let mut gx = Vec::with_capacity(g.len());
                for (yr, gr) in y.chunks(d).zip(g.chunks(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                send(*x, gx);
            }
            Op::LogSoftmax(x) => {
                let d = node.value.last_dim();
                let mut gx = Vec::with_capacity(g.len());
                for (yr, gr) in y.chunks(d).zip(g.chunks(d)) {
                    let total: f64 = gr.iter().sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| gv - yv.exp() * total));
                }
                send(*x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            } => {
                let d = node.value.last_dim();
                let gam = &self.value(*gamma).data;
                let mut gg = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                let mut gx = Vec::with_capacity(g.len());
                for (r, (gr, xh)) in g.chunks(d).zip(normalized.chunks(d)).enumerate() {
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        gg[j] += gr[j] * xh[j];
                        gbeta[j] += gr[j];
                        let dxh = gr[j] * gam[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        gx.push(rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh));
                    }
                }
                send(*x, gx);
                send(*gamma, gg);
                send(*beta, gbeta);
            }
            Op::MeanAxis { x, axis } => {
                let shape = &self.value(*x).shape;
                let (outer, len, inner) = split_axis(shape, *axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            gx[base + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                send(*x, gx);
            }
            Op::Transpose(x) => {
                let s = &node.value.shape;
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                send(*x, transpose_raw(g, r, c));
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let d = t.shape[1];
                let mut gt = vec![0.0; t.numel()];
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                    for (a, b) in dst.iter_mut().zip(&g[row * d..(row + 1) * d]) {
                        *a += b;
                    }
                }
                send(*table, gt);
            }
            Op::Dropout { x, mask } => send(*x, zip_map(g, mask, |a, b| a * b)),
            Op::Concat { inputs, last_dim } => {
                if *last_dim {
                    let width = node.value.last_dim();
                    let rows = node.value.rows();
                    let mut offset = 0;
                    for &v in inputs {
                        let w = self.value(v).last_dim();
                        let mut gv = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gv.extend_from_slice(&g[r * width + offset..r * width + offset + w]);
                        }
                        offset += w;
                        send(v, gv);
                    }
                } else {
                    let mut offset = 0;
                    for &v in inputs {
                        let n = self.value(v).numel();
                        send(v, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
            }
            Op::SliceLast { x, start } => {
                let t = self.value(*x);
                let d = t.last_dim();
                let w = node.value.last_dim();
                let mut gx = vec![0.0; t.numel()];
                for (r, gr) in g.chunks(w).enumerate() {
                    gx[r * d + start..r * d + start + w].copy_from_slice(gr);
                }
                send(*x, gx);
            }
            Op::L2Normalize { x, norms } => {
                let d = node.value.last_dim();
                let mut gx = Vec::with_capacity(g.len());
                for ((yr, gr), n) in y.chunks(d).zip(g.chunks(d)).zip(norms) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| (gv - yv * dot) / n));
                }
                send(*x, gx);
            }
            Op::Scale(x, c) => send(*x, g.iter().map(|v| v * c).collect()),
            Op::Exp(x) => send(*x, zip_map(g, y, |a, b| a * b)),
            Op::Log(x) => send(*x, zip_map(g, &self.value(*x).data, |a, b| a / b)),
            Op::MaskedFill { x, mask } => send(
                *x,
                g.iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { 0.0 } else { v })
                    .collect(),
            ),
            Op::Gather { x, index } => {
                let t = self.value(*x);
                let d = t.last_dim();
                let mut gx = vec![0.0; t.numel()];
                for (i, &j) in index.iter().enumerate() {
                    gx[i * d + j] += g[i];
                }
                send(*x, gx);
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Batched transpose of the trailing `r x c` blocks.
fn transpose_raw(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let block = r * c;
    let mut out = vec![0.0; src.len()];
    if block == 0 {
        return out;
    }
    for (sb, ob) in src.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..r {
            for j in 0..c {
                ob[j * r + i] = sb[i * c + j];
            }
        }
    }
    out
}

/// Row-major `[m, k] x [k, n]`.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::stream;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let i = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), [1., 2., 3., 4.]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0., 0.]));
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), [0.5, 0.5]);
    }

    #[test]
    fn relu_derivative() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[-1., 2.]));
        let r = g.relu(x);
        let s = g.sum(r);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), [0., 1.]);
    }

    #[test]
    fn backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), [6.0]);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), [12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let y = g.relu(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[0.; 6]));
        let b = g.constant(t(&[2, 3], &[0.; 6]));
        assert!(g.matmul(a, b).is_err());
        let c = g.constant(t(&[3, 2], &[0.; 6]));
        assert!(g.mul(a, c).is_err());
        assert!(g.add(a, c).is_err());
        let empty = g.constant(Tensor::zeros(&[2, 0]));
        assert!(g.softmax(empty).is_err());
        let nothing = g.constant(Tensor::zeros(&[0]));
        assert!(g.log(nothing).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1., 2., 3.]));
        let y = g.dropout(x, 0.5, false, &mut stream(0));
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_rate_and_scaling() {
        let n = 100_000;
        let r = 0.3;
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[n], 1.0));
        let y = g.dropout(x, r, true, &mut stream(17));
        let vals = g.value(y).data();
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        let tol = 4.0 * (r * (1.0 - r) / n as f64).sqrt();
        assert!((zeros - r).abs() <= tol, "{zeros}");
        assert!(vals
            .iter()
            .all(|&v| v == 0.0 || (v - 1.0 / (1.0 - r)).abs() < 1e-15));
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut g = Graph::new();
        let mut rng = stream(3);
        let data: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = g.constant(t(&[4, 10], &data));
        let gamma = g.constant(Tensor::full(&[10], 1.0));
        let beta = g.constant(Tensor::zeros(&[10]));
        let y = g.layer_norm(x, gamma, beta, 0.0).unwrap();
        for row in g.value(y).data().chunks(10) {
            let mean = row.iter().sum::<f64>() / 10.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let mut g = Graph::new();
        let e = g.param(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            g.embedding(e, &[0, 3]),
            Err(Error::TokenOutOfRange { id: 3, vocab: 3 })
        ));
    }

    #[test]
    fn l2_normalize_rejects_zero_rows() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 0., 0., 0.]));
        assert!(matches!(g.l2_normalize(x), Err(Error::ZeroNorm { row: 1 })));
    }

    #[test]
    fn mean_axis_shapes() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let m0 = g.mean_axis(x, 0).unwrap();
        assert_eq!(g.value(m0).data(), [2.5, 3.5, 4.5]);
        let m1 = g.mean_axis(x, 1).unwrap();
        assert_eq!(g.value(m1).data(), [2., 5.]);
    }
}
