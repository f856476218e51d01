//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive as a node holding its output value and
//! the ids of its parents; [`Tape::backward`] walks the record in reverse,
//! accumulating vector-Jacobian products. Gradients can be read for any
//! recorded node, not just leaves, which is what activation-based
//! interpretation methods rely on.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};
use std::rc::Rc;

pub type VarId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    AddScalar(VarId),
    MulScalar(VarId, f64),
    Matmul(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Exp(VarId),
    Ln(VarId),
    SoftmaxLast(VarId),
    Sum(VarId),
    SumAxis(VarId, usize),
    MaxAxis(VarId, usize),
    ConcatCols(Vec<VarId>),
    GatherRows(VarId, Rc<Vec<usize>>),
    Expand(VarId),
    Reshape(VarId),
    PairwiseDist2(VarId),
    BceWithLogits(VarId, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when some ancestor was registered via [`Tape::var`].
    needs: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. node `id`; zeros when nothing flowed there
    /// (including detached leaves).
    pub fn wrt(&self, id: VarId) -> Tensor {
        match &self.grads[id] {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[id].clone()),
        }
    }
}

/// Decompose `shape` around `axis` into (outer, len, inner) extents.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
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

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs: bool) -> VarId {
        self.nodes.push(Node { value, op, needs });
        self.nodes.len() - 1
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id].needs
    }

    /// Constant input: gradients are never tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn var(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf, true)
    }

    // ---- elementwise ----

    fn zip2(
        &mut self,
        a: VarId,
        b: VarId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId> {
        self.nodes[a].value.same_shape(&self.nodes[b].value, op_name)?;
        let data = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::with_shape_unchecked(shape, data), op, needs))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip2(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip2(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip2(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip2(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn map1(&mut self, a: VarId, f: impl Fn(f64) -> f64, op: Op) -> VarId {
        let data = self.nodes[a].value.data().iter().map(|x| f(*x)).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::with_shape_unchecked(shape, data), op, needs)
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        self.map1(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: VarId, c: f64) -> VarId {
        self.map1(a, |x| x * c, Op::MulScalar(a, c))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        self.map1(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.map1(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.map1(a, f64::exp, Op::Exp(a))
    }

    /// Natural log; callers must keep inputs strictly positive.
    pub fn ln(&mut self, a: VarId) -> VarId {
        self.map1(a, f64::ln, Op::Ln(a))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let value = gemm(va, vb, false, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul(a, b), needs))
    }

    // ---- reductions ----

    /// Full reduction to a single-element tensor.
    pub fn sum(&mut self, a: VarId) -> VarId {
        let total: f64 = self.nodes[a].value.data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    pub fn sum_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let va = &self.nodes[a].value;
        if axis >= va.rank() {
            return Err(Error::BadOperand {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for shape {:?}", va.shape()),
            });
        }
        let (outer, len, inner) = around_axis(va.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let src = va.data();
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += *s;
                }
            }
        }
        let shape = removed_axis(va.shape(), axis);
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::with_shape_unchecked(shape, out),
            Op::SumAxis(a, axis),
            needs,
        ))
    }

    /// Max over `axis`; gradients route to the first maximal index.
    pub fn max_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let va = &self.nodes[a].value;
        if axis >= va.rank() {
            return Err(Error::BadOperand {
                op: "max_axis",
                msg: format!("axis {axis} out of range for shape {:?}", va.shape()),
            });
        }
        let (outer, len, inner) = around_axis(va.shape(), axis);
        if len == 0 {
            return Err(Error::BadOperand {
                op: "max_axis",
                msg: "cannot reduce an empty axis".into(),
            });
        }
        let src = va.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    let v = src[base + i];
                    let slot = &mut out[o * inner + i];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        let shape = removed_axis(va.shape(), axis);
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::with_shape_unchecked(shape, out),
            Op::MaxAxis(a, axis),
            needs,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: VarId) -> VarId {
        let va = &self.nodes[a].value;
        let cols = *va.shape().last().unwrap();
        let mut out = Vec::with_capacity(va.len());
        for row in va.data().chunks(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| e / z));
        }
        let shape = va.shape().to_vec();
        let needs = self.needs(a);
        self.push(
            Tensor::with_shape_unchecked(shape, out),
            Op::SoftmaxLast(a),
            needs,
        )
    }

    // ---- structural ----

    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::BadOperand {
                op: "concat_cols",
                msg: "no operands".into(),
            });
        }
        let n = self.nodes[parts[0]].value.shape()[0];
        for &p in parts {
            let vp = &self.nodes[p].value;
            if vp.rank() != 2 || vp.shape()[0] != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0]].value.shape().to_vec(),
                    rhs: vp.shape().to_vec(),
                });
            }
        }
        let total_cols: usize = parts.iter().map(|&p| self.nodes[p].value.shape()[1]).sum();
        let mut out = Vec::with_capacity(n * total_cols);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.nodes[p].value.row(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::with_shape_unchecked(vec![n, total_cols], out),
            Op::ConcatCols(parts.to_vec()),
            needs,
        ))
    }

    /// Select rows of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(&mut self, a: VarId, indices: Rc<Vec<usize>>) -> Result<VarId> {
        let va = &self.nodes[a].value;
        if va.rank() != 2 {
            return Err(Error::BadOperand {
                op: "gather_rows",
                msg: format!("wants rank 2, got {:?}", va.shape()),
            });
        }
        let n = va.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::BadOperand {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {n} rows"),
            });
        }
        let m = va.shape()[1];
        let mut out = Vec::with_capacity(indices.len() * m);
        for &i in indices.iter() {
            out.extend_from_slice(va.row(i));
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::with_shape_unchecked(vec![indices.len(), m], out),
            Op::GatherRows(a, indices),
            needs,
        ))
    }

    /// Materialized broadcast. Supported: single-element to anything,
    /// `(n,1)` to `(n,m)`, and `(m,)` to `(n,m)`.
    pub fn expand(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        let va = &self.nodes[a].value;
        let target: Vec<usize> = shape.to_vec();
        let out = if va.len() == 1 {
            Tensor::full(target.clone(), va.item())
        } else if va.rank() == 2
            && va.shape()[1] == 1
            && target.len() == 2
            && target[0] == va.shape()[0]
        {
            let m = target[1];
            let mut data = Vec::with_capacity(va.len() * m);
            for &v in va.data() {
                data.extend(std::iter::repeat(v).take(m));
            }
            Tensor::with_shape_unchecked(target.clone(), data)
        } else if va.rank() == 1 && target.len() == 2 && target[1] == va.len() {
            let mut data = Vec::with_capacity(target[0] * va.len());
            for _ in 0..target[0] {
                data.extend_from_slice(va.data());
            }
            Tensor::with_shape_unchecked(target.clone(), data)
        } else {
            return Err(Error::ShapeMismatch {
                op: "expand",
                lhs: va.shape().to_vec(),
                rhs: target,
            });
        };
        let needs = self.needs(a);
        Ok(self.push(out, Op::Expand(a), needs))
    }

    /// Reinterpret the buffer under a new shape of equal length.
    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId> {
        let va = &self.nodes[a].value;
        if shape.iter().product::<usize>() != va.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: va.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::with_shape_unchecked(shape, va.data().to_vec());
        let needs = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), needs))
    }

    /// Squared Euclidean distances between all row pairs of an `(n,k)` tensor.
    pub fn pairwise_dist2(&mut self, a: VarId) -> Result<VarId> {
        let va = &self.nodes[a].value;
        if va.rank() != 2 {
            return Err(Error::BadOperand {
                op: "pairwise_dist2",
                msg: format!("wants rank 2, got {:?}", va.shape()),
            });
        }
        let n = va.shape()[0];
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d2: f64 = va
                    .row(i)
                    .iter()
                    .zip(va.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                out[i * n + j] = d2;
                out[j * n + i] = d2;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::with_shape_unchecked(vec![n, n], out),
            Op::PairwiseDist2(a),
            needs,
        ))
    }

    /// Numerically stable binary cross-entropy on a single logit.
    pub fn bce_with_logits(&mut self, logit: VarId, target: f64) -> Result<VarId> {
        let v = &self.nodes[logit].value;
        if v.len() != 1 {
            return Err(Error::BadOperand {
                op: "bce_with_logits",
                msg: format!("wants a single logit, got shape {:?}", v.shape()),
            });
        }
        let z = v.item();
        let loss = z.max(0.0) - target * z + (-z.abs()).exp().ln_1p();
        let needs = self.needs(logit);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits(logit, target), needs))
    }

    // ---- reverse pass ----

    /// Accumulate gradients of scalar node `out` w.r.t. every node.
    pub fn backward(&mut self, out: VarId) -> Result<Gradients> {
        if out >= self.nodes.len() {
            return Err(Error::Autodiff(format!("unknown node id {out}")));
        }
        if self.nodes[out].value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "gradient root must be scalar, got shape {:?}",
                self.nodes[out].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        // The seed must mirror the root's shape: a (1, 1) logit root would
        // otherwise hand rank-1 gradients to rank-2 backward arms.
        grads[out] = Some(Tensor::with_shape_unchecked(
            self.nodes[out].value.shape().to_vec(),
            vec![1.0],
        ));

        for id in (0..=out).rev() {
            if grads[id].is_none() || !self.nodes[id].needs {
                continue;
            }
            // Parents always precede children on the tape, so split the
            // gradient buffer to read node `id` while writing its parents.
            let (before, rest) = grads.split_at_mut(id);
            let g = rest[0].as_ref().unwrap();
            self.push_to_parents(id, g, before);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn push_to_parents(&self, id: VarId, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let accum = |grads: &mut [Option<Tensor>], p: VarId, delta: Tensor| {
            if !self.nodes[p].needs {
                return;
            }
            match &mut grads[p] {
                Some(t) => {
                    for (d, s) in t.data_mut().iter_mut().zip(delta.data()) {
                        *d += *s;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g.clone());
                let neg = unary(g, |x| -x);
                accum(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                accum(grads, *a, binary(g, &self.nodes[*b].value, |x, y| x * y));
                accum(grads, *b, binary(g, &self.nodes[*a].value, |x, y| x * y));
            }
            Op::Div(a, b) => {
                let vb = &self.nodes[*b].value;
                accum(grads, *a, binary(g, vb, |x, y| x / y));
                let va = &self.nodes[*a].value;
                let mut d = binary(g, va, |x, y| x * y);
                for (v, y) in d.data_mut().iter_mut().zip(vb.data()) {
                    *v = -*v / (y * y);
                }
                accum(grads, *b, d);
            }
            Op::AddScalar(a) => accum(grads, *a, g.clone()),
            Op::MulScalar(a, c) => accum(grads, *a, unary(g, |x| x * c)),
            Op::Matmul(a, b) => {
                accum(grads, *a, gemm(g, &self.nodes[*b].value, false, true));
                accum(grads, *b, gemm(&self.nodes[*a].value, g, true, false));
            }
            Op::Relu(a) => {
                // node.value is relu(x); positive output implies positive input.
                accum(grads, *a, binary(g, &node.value, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                accum(grads, *a, binary(g, &node.value, |x, y| x * y * (1.0 - y)));
            }
            Op::Exp(a) => accum(grads, *a, binary(g, &node.value, |x, y| x * y)),
            Op::Ln(a) => {
                accum(grads, *a, binary(g, &self.nodes[*a].value, |x, y| x / y));
            }
            Op::SoftmaxLast(a) => {
                let y = &node.value;
                let cols = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for (r, (yrow, grow)) in
                    y.data().chunks(cols).zip(g.data().chunks(cols)).enumerate()
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(yi, gi)| yi * gi).sum();
                    for c in 0..cols {
                        d[r * cols + c] = yrow[c] * (grow[c] - dot);
                    }
                }
                accum(
                    grads,
                    *a,
                    Tensor::with_shape_unchecked(y.shape().to_vec(), d),
                );
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                accum(grads, *a, Tensor::full(shape, g.item()));
            }
            Op::SumAxis(a, axis) => {
                let pshape = self.nodes[*a].value.shape();
                let (outer, len, inner) = around_axis(pshape, *axis);
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        d[base..base + inner].copy_from_slice(src);
                    }
                }
                accum(grads, *a, Tensor::with_shape_unchecked(pshape.to_vec(), d));
            }
            Op::MaxAxis(a, axis) => {
                let parent = &self.nodes[*a].value;
                let (outer, len, inner) = around_axis(parent.shape(), *axis);
                let src = parent.data();
                let mut d = vec![0.0; src.len()];
                // Ties route the whole gradient to the first maximal index.
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0usize;
                        let mut best_v = f64::NEG_INFINITY;
                        for j in 0..len {
                            let v = src[(o * len + j) * inner + i];
                            if v > best_v {
                                best_v = v;
                                best = j;
                            }
                        }
                        d[(o * len + best) * inner + i] = g.data()[o * inner + i];
                    }
                }
                accum(
                    grads,
                    *a,
                    Tensor::with_shape_unchecked(parent.shape().to_vec(), d),
                );
            }
            Op::ConcatCols(parts) => {
                let n = node.value.shape()[0];
                let mut col = 0usize;
                let total = node.value.shape()[1];
                for &p in parts {
                    let m = self.nodes[p].value.shape()[1];
                    let mut d = Vec::with_capacity(n * m);
                    for r in 0..n {
                        let base = r * total + col;
                        d.extend_from_slice(&g.data()[base..base + m]);
                    }
                    accum(grads, p, Tensor::with_shape_unchecked(vec![n, m], d));
                    col += m;
                }
            }
            Op::GatherRows(a, indices) => {
                let pshape = self.nodes[*a].value.shape().to_vec();
                let m = pshape[1];
                let mut d = vec![0.0; pshape.iter().product()];
                for (r, &i) in indices.iter().enumerate() {
                    let src = &g.data()[r * m..(r + 1) * m];
                    let dst = &mut d[i * m..(i + 1) * m];
                    for (x, s) in dst.iter_mut().zip(src) {
                        *x += *s;
                    }
                }
                accum(grads, *a, Tensor::with_shape_unchecked(pshape, d));
            }
            Op::Expand(a) => {
                let parent = &self.nodes[*a].value;
                let out_shape = node.value.shape();
                let d = if parent.len() == 1 {
                    let total = g.data().iter().sum();
                    Tensor::with_shape_unchecked(parent.shape().to_vec(), vec![total])
                } else if parent.rank() == 2 && parent.shape()[1] == 1 {
                    let m = out_shape[1];
                    let sums: Vec<f64> = g.data().chunks(m).map(|c| c.iter().sum()).collect();
                    Tensor::with_shape_unchecked(parent.shape().to_vec(), sums)
                } else {
                    // (m,) broadcast over rows: sum the rows back together.
                    let m = parent.len();
                    let mut sums = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (s, v) in sums.iter_mut().zip(row) {
                            *s += *v;
                        }
                    }
                    Tensor::with_shape_unchecked(parent.shape().to_vec(), sums)
                };
                accum(grads, *a, d);
            }
            Op::Reshape(a) => {
                let pshape = self.nodes[*a].value.shape().to_vec();
                accum(
                    grads,
                    *a,
                    Tensor::with_shape_unchecked(pshape, g.data().to_vec()),
                );
            }
            Op::PairwiseDist2(a) => {
                let p = &self.nodes[*a].value;
                let (n, k) = (p.shape()[0], p.shape()[1]);
                let mut d = vec![0.0; n * k];
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (g.data()[i * n + j] + g.data()[j * n + i]);
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            d[i * k + c] += w * (p.data()[i * k + c] - p.data()[j * k + c]);
                        }
                    }
                }
                accum(grads, *a, Tensor::with_shape_unchecked(vec![n, k], d));
            }
            Op::BceWithLogits(a, target) => {
                let z = self.nodes[*a].value.item();
                let shape = self.nodes[*a].value.shape().to_vec();
                let d = vec![g.item() * (sigmoid(z) - target)];
                accum(grads, *a, Tensor::with_shape_unchecked(shape, d));
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn unary(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::with_shape_unchecked(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect())
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::with_shape_unchecked(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        // f(x, y) = x^2 + y^2 at (3, 4) -> df/dx = 6, df/dy = 8
        let mut t = Tape::new();
        let x = t.var(Tensor::scalar(3.0));
        let y = t.var(Tensor::scalar(4.0));
        let x2 = t.mul(x, x).unwrap();
        let y2 = t.mul(y, y).unwrap();
        let f = t.add(x2, y2).unwrap();
        let g = t.backward(f).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
        assert_eq!(g.wrt(y).item(), 8.0);
    }

    #[test]
    fn matmul_chain_gradient() {
        // loss = sum(x W), x = [1, 2], W = [[3], [5]] -> dW = x^T, dx = W^T
        let mut t = Tape::new();
        let x = t.var(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = t.var(Tensor::new(vec![2, 1], vec![3.0, 5.0]).unwrap());
        let y = t.matmul(x, w).unwrap();
        let loss = t.sum(y);
        assert_eq!(t.value(loss).item(), 13.0);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, 2.0]);
        assert_eq!(g.wrt(x).data(), &[3.0, 5.0]);
    }

    #[test]
    fn max_tie_routes_to_first_index() {
        let mut t = Tape::new();
        let x = t.var(Tensor::new(vec![1, 3], vec![2.0, 7.0, 7.0]).unwrap());
        let m = t.max_axis(x, 1).unwrap();
        let loss = t.sum(m);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn detached_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.var(Tensor::scalar(2.0));
        let c = t.leaf(Tensor::scalar(10.0));
        let y = t.mul(x, c).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(c).item(), 0.0);
        assert_eq!(g.wrt(x).item(), 10.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.var(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let err = t.backward(x).unwrap_err();
        assert!(err.to_string().contains("must be scalar"));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.var(Tensor::zeros(vec![2, 3]));
        let b = t.var(Tensor::zeros(vec![3, 3]));
        let err = t.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 3]"), "{msg}");
    }

    #[test]
    fn softmax_rows_sum_to_one_and_grad_is_centered() {
        let mut t = Tape::new();
        let x = t.var(Tensor::new(vec![2, 3], vec![0.1, 1.0, -2.0, 3.0, 3.0, 3.0]).unwrap());
        let s = t.softmax(x);
        for row in t.value(s).data().chunks(3) {
            let z: f64 = row.iter().sum();
            assert!((z - 1.0).abs() < 1e-12);
        }
        // sum(softmax) is constant 1 per row, so its gradient vanishes.
        let loss = t.sum(s);
        let g = t.backward(loss).unwrap();
        assert!(g.wrt(x).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut t = Tape::new();
        let x = t.var(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let gathered = t
            .gather_rows(x, Rc::new(vec![0, 0, 1]))
            .unwrap();
        let loss = t.sum(gathered);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn pairwise_dist2_values() {
        let mut t = Tape::new();
        let p = t.var(Tensor::new(vec![2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap());
        let d = t.pairwise_dist2(p).unwrap();
        assert_eq!(t.value(d).data(), &[0.0, 25.0, 25.0, 0.0]);
    }

    #[test]
    fn bce_matches_manual_value_and_grad() {
        let mut t = Tape::new();
        let z = t.var(Tensor::scalar(0.3));
        let loss = t.bce_with_logits(z, 1.0).unwrap();
        let expect = (1.0 + (-0.3f64).exp()).ln();
        assert!((t.value(loss).item() - expect).abs() < 1e-12);
        let g = t.backward(loss).unwrap();
        assert!((g.wrt(z).item() - (sigmoid(0.3) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn expand_round_trips_through_reduction() {
        let mut t = Tape::new();
        let col = t.var(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let wide = t.expand(col, &[3, 4]).unwrap();
        let loss = t.sum(wide);
        assert_eq!(t.value(loss).item(), 24.0);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(col).data(), &[4.0, 4.0, 4.0]);
    }
}
