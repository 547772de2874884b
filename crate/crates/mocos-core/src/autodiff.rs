//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every forward operation in an append-only topological
//! order; [`Tape::backward`] walks it once in reverse, accumulating (summing)
//! gradients across fan-out. Every forward result is scanned for NaN/Inf so
//! numeric failures surface at the op that produced them, not three modules
//! later.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    /// Matrix plus a vector broadcast over rows.
    AddRow(usize, usize),
    /// Matrix times a vector broadcast over rows.
    MulRow(usize, usize),
    Concat(Vec<usize>, usize),
    Reshape(usize),
    RowSoftmax(usize),
    /// Softmax restricted to the mask's support; output zero elsewhere.
    MaskedRowSoftmax(usize),
    RowLogSoftmax(usize),
    LayerNorm(usize, T),
    Relu(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    L2NormalizeRows(usize, T),
    Log(usize),
    Exp(usize),
    Transpose(usize),
    GatherRows(usize, Vec<usize>),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
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
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a variable.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records a constant leaf; no gradient will flow into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(Op::Leaf, value, false)
    }

    /// Records a parameter leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    fn push_unchecked(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Matmul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => self.nodes[*a].requires_grad || self.nodes[*b].requires_grad,
            Op::Concat(parts, _) => parts.iter().any(|&p| self.nodes[p].requires_grad),
            Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::RowSoftmax(a)
            | Op::MaskedRowSoftmax(a)
            | Op::RowLogSoftmax(a)
            | Op::LayerNorm(a, _)
            | Op::Relu(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::L2NormalizeRows(a, _)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Transpose(a)
            | Op::GatherRows(a, _) => self.nodes[*a].requires_grad,
        };
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn want_matrix(&self, name: &'static str, v: Var) -> Result<()> {
        if self.nodes[v.0].value.ndim() != 2 {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.nodes[v.0].value.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(())
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// Matrix product `[r,k]·[k,c] -> [r,c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.want_matrix("matmul", a)?;
        self.want_matrix("matmul", b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = mm(ta, tb);
        self.push("matmul", Op::Matmul(a.0, b.0), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", Op::Add(a.0, b.0), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("subtract", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push("subtract", Op::Sub(a.0, b.0), out)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise-multiply", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push("elementwise-multiply", Op::Mul(a.0, b.0), out)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale-by-constant", Op::Scale(a.0, c), out)
    }

    /// `[r,c] + [c]`, the vector added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast_shapes("add-row", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = ta.clone();
        let c = ta.cols();
        for r in 0..ta.rows() {
            for j in 0..c {
                *out.at_mut(r, j) = ta.at(r, j) + tb.data()[j];
            }
        }
        self.push("add-row", Op::AddRow(a.0, b.0), out)
    }

    /// `[r,c] ⊙ [c]`, the vector multiplied into every row.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast_shapes("mul-row", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = ta.clone();
        let c = ta.cols();
        for r in 0..ta.rows() {
            for j in 0..c {
                *out.at_mut(r, j) = ta.at(r, j) * tb.data()[j];
            }
        }
        self.push("mul-row", Op::MulRow(a.0, b.0), out)
    }

    fn row_broadcast_shapes(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 1 || tb.len() != ta.cols() {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Concatenates matrices along `axis` (0 stacks rows, 1 widens columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "concat-along-axis",
                lhs: vec![parts.len()],
                rhs: vec![axis],
            });
        }
        for &p in parts {
            self.want_matrix("concat-along-axis", p)?;
        }
        let first = self.value(parts[0]).shape().to_vec();
        let fixed = 1 - axis;
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[fixed] != first[fixed] {
                return Err(Error::ShapeMismatch {
                    op: "concat-along-axis",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (rows, cols) = if axis == 0 {
            (total, first[1])
        } else {
            (first[0], total)
        };
        let mut out = Tensor::zeros(&[rows, cols]);
        if axis == 0 {
            let mut r0 = 0;
            for &p in parts {
                let t = self.value(p);
                for r in 0..t.rows() {
                    for c in 0..cols {
                        *out.at_mut(r0 + r, c) = t.at(r, c);
                    }
                }
                r0 += t.rows();
            }
        } else {
            let mut c0 = 0;
            for &p in parts {
                let t = self.value(p);
                for r in 0..rows {
                    for c in 0..t.cols() {
                        *out.at_mut(r, c0 + c) = t.at(r, c);
                    }
                }
                c0 += t.cols();
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat-along-axis", Op::Concat(idx, axis), out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        self.push("reshape", Op::Reshape(a.0), out)
    }

    /// Numerically stable per-row softmax of a matrix.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.want_matrix("row-softmax", a)?;
        let ta = self.value(a);
        let mut out = ta.clone();
        for r in 0..ta.rows() {
            softmax_row_full(ta.row(r), out.row_mut(r));
        }
        self.push("row-softmax", Op::RowSoftmax(a.0), out)
    }

    /// Per-row softmax over the mask's support; masked entries come out as
    /// exact zeros. A row with no unmasked entry is an error.
    pub fn masked_row_softmax(&mut self, a: Var, mask: &Tensor<T>) -> Result<Var> {
        self.want_matrix("masked-row-softmax", a)?;
        let ta = self.value(a);
        if ta.shape() != mask.shape() {
            return Err(Error::ShapeMismatch {
                op: "masked-row-softmax",
                lhs: ta.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        for r in 0..ta.rows() {
            softmax_row_masked(ta.row(r), mask.row(r), out.row_mut(r))
                .ok_or(Error::EmptyMaskRow { row: r })?;
        }
        self.push(
            "masked-row-softmax",
            Op::MaskedRowSoftmax(a.0),
            out,
        )
    }

    /// Per-row log-softmax (stable log of [`Tape::row_softmax`]).
    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        self.want_matrix("row-log-softmax", a)?;
        let ta = self.value(a);
        let mut out = ta.clone();
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let max = row_max(row);
            let mut sum = T::zero();
            for &x in row {
                sum += (x - max).exp();
            }
            let lse = max + sum.ln();
            for (o, &x) in out.row_mut(r).iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        self.push("row-log-softmax", Op::RowLogSoftmax(a.0), out)
    }

    /// Per-row standardization: subtract the row mean, divide by
    /// sqrt(variance + eps). Affine scale/shift live outside this op.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Result<Var> {
        self.want_matrix("layer-normalize", a)?;
        let ta = self.value(a);
        let mut out = ta.clone();
        let c = ta.cols();
        let cn = T::of(c as f64);
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let mut mean = T::zero();
            for &x in row {
                mean += x;
            }
            mean /= cn;
            let mut var = T::zero();
            for &x in row {
                var += (x - mean) * (x - mean);
            }
            var /= cn;
            let inv = T::one() / (var + eps).sqrt();
            for (o, &x) in out.row_mut(r).iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
        }
        self.push("layer-normalize", Op::LayerNorm(a.0, eps), out)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", Op::Relu(a.0), out)
    }

    /// Sums a matrix over `axis`: 0 collapses rows into a `[cols]` vector,
    /// 1 collapses columns into a `[rows]` vector.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.fold_axis("sum-over-axis", a, axis, false)?;
        self.push("sum-over-axis", Op::SumAxis(a.0, axis), out)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.fold_axis("mean-over-axis", a, axis, true)?;
        self.push("mean-over-axis", Op::MeanAxis(a.0, axis), out)
    }

    fn fold_axis(&self, name: &'static str, a: Var, axis: usize, mean: bool) -> Result<Tensor<T>> {
        self.want_matrix(name, a)?;
        if axis > 1 {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let ta = self.value(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut out = if axis == 0 {
            Tensor::zeros(&[cols])
        } else {
            Tensor::zeros(&[rows])
        };
        for r in 0..rows {
            for c in 0..cols {
                let slot = if axis == 0 { c } else { r };
                out.data_mut()[slot] += ta.at(r, c);
            }
        }
        if mean {
            let n = T::of(if axis == 0 { rows } else { cols } as f64);
            for v in out.data_mut() {
                *v /= n;
            }
        }
        Ok(out)
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let mut s = T::zero();
        for &x in self.value(a).data() {
            s += x;
        }
        self.push("sum-all", Op::SumAll(a.0), Tensor::scalar(s))
    }

    /// Mean of all entries, as a rank-0 tensor.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let mut s = T::zero();
        for &x in self.value(a).data() {
            s += x;
        }
        let m = s / T::of(n as f64);
        self.push("mean-all", Op::MeanAll(a.0), Tensor::scalar(m))
    }

    /// Scales each row to unit L2 norm: `x / sqrt(sum(x^2) + eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        self.want_matrix("l2-normalize-rows", a)?;
        let ta = self.value(a);
        let mut out = ta.clone();
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let mut ss = T::zero();
            for &x in row {
                ss += x * x;
            }
            let inv = T::one() / (ss + eps).sqrt();
            for (o, &x) in out.row_mut(r).iter_mut().zip(row) {
                *o = x * inv;
            }
        }
        self.push(
            "l2-normalize-rows",
            Op::L2NormalizeRows(a.0, eps),
            out,
        )
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.ln());
        self.push("log", Op::Log(a.0), out)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.exp());
        self.push("exp", Op::Exp(a.0), out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.want_matrix("transpose", a)?;
        let ta = self.value(a);
        let mut out = Tensor::zeros(&[ta.cols(), ta.rows()]);
        for r in 0..ta.rows() {
            for c in 0..ta.cols() {
                *out.at_mut(c, r) = ta.at(r, c);
            }
        }
        self.push("transpose", Op::Transpose(a.0), out)
    }

    /// Selects rows by index (repeats allowed); gradients scatter-add back.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        self.want_matrix("gather-rows", a)?;
        let ta = self.value(a);
        let cols = ta.cols();
        let mut out = Tensor::zeros(&[idx.len(), cols]);
        for (r, &i) in idx.iter().enumerate() {
            if i >= ta.rows() {
                return Err(Error::ShapeMismatch {
                    op: "gather-rows",
                    lhs: ta.shape().to_vec(),
                    rhs: vec![i],
                });
            }
            for c in 0..cols {
                *out.at_mut(r, c) = ta.at(i, c);
            }
        }
        self.push("gather-rows", Op::GatherRows(a.0, idx.to_vec()), out)
    }

    /// Reverse pass from a scalar loss. Returns per-variable gradients;
    /// variables the loss does not depend on (or that were recorded as
    /// constants) have no entry.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::NotScalar(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(loss_node.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad && !matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = None;
                continue;
            }
            // Inputs always precede their consumers on the tape, so the
            // split keeps the upstream slots mutable while this node's
            // gradient stays borrowed.
            let (before, after) = grads.split_at_mut(i);
            let Some(g) = after[0].as_ref() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        let da = mm_nt(g, &self.nodes[*b].value);
                        accumulate(&mut before[*a], da);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = mm_tn(&self.nodes[*a].value, g);
                        accumulate(&mut before[*b], db);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[*a].requires_grad {
                        accumulate(&mut before[*a], g.clone());
                    }
                    if self.nodes[*b].requires_grad {
                        accumulate(&mut before[*b], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[*a].requires_grad {
                        accumulate(&mut before[*a], g.clone());
                    }
                    if self.nodes[*b].requires_grad {
                        accumulate(&mut before[*b], g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        accumulate(&mut before[*a], zip(g, &self.nodes[*b].value, |x, y| x * y));
                    }
                    if self.nodes[*b].requires_grad {
                        accumulate(&mut before[*b], zip(g, &self.nodes[*a].value, |x, y| x * y));
                    }
                }
                Op::Scale(a, c) => {
                    if self.nodes[*a].requires_grad {
                        let c = *c;
                        accumulate(&mut before[*a], g.map(|x| x * c));
                    }
                }
                Op::AddRow(a, b) => {
                    if self.nodes[*a].requires_grad {
                        accumulate(&mut before[*a], g.clone());
                    }
                    if self.nodes[*b].requires_grad {
                        let cols = g.cols();
                        let mut db = Tensor::zeros(&[cols]);
                        for r in 0..g.rows() {
                            for c in 0..cols {
                                db.data_mut()[c] += g.at(r, c);
                            }
                        }
                        accumulate(&mut before[*b], db);
                    }
                }
                Op::MulRow(a, b) => {
                    let bv = &self.nodes[*b].value;
                    if self.nodes[*a].requires_grad {
                        let mut da = g.clone();
                        for r in 0..da.rows() {
                            for c in 0..da.cols() {
                                *da.at_mut(r, c) = g.at(r, c) * bv.data()[c];
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                    if self.nodes[*b].requires_grad {
                        let av = &self.nodes[*a].value;
                        let mut db = Tensor::zeros(&[g.cols()]);
                        for r in 0..g.rows() {
                            for c in 0..g.cols() {
                                db.data_mut()[c] += g.at(r, c) * av.at(r, c);
                            }
                        }
                        accumulate(&mut before[*b], db);
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.nodes[p].value.shape().to_vec();
                        let span = shape[*axis];
                        if self.nodes[p].requires_grad {
                            let mut dp = Tensor::zeros(&shape);
                            for r in 0..shape[0] {
                                for c in 0..shape[1] {
                                    let v = if *axis == 0 {
                                        g.at(offset + r, c)
                                    } else {
                                        g.at(r, offset + c)
                                    };
                                    *dp.at_mut(r, c) = v;
                                }
                            }
                            accumulate(&mut before[p], dp);
                        }
                        offset += span;
                    }
                }
                Op::Reshape(a) => {
                    if self.nodes[*a].requires_grad {
                        let da = g.reshaped(self.nodes[*a].value.shape()).expect(
                            "reshape gradient length always matches its input",
                        );
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::RowSoftmax(a) | Op::MaskedRowSoftmax(a) => {
                    if self.nodes[*a].requires_grad {
                        let y = &node.value;
                        let mut da = g.clone();
                        for r in 0..y.rows() {
                            let mut dot = T::zero();
                            for c in 0..y.cols() {
                                dot += g.at(r, c) * y.at(r, c);
                            }
                            for c in 0..y.cols() {
                                *da.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::RowLogSoftmax(a) => {
                    if self.nodes[*a].requires_grad {
                        let y = &node.value;
                        let mut da = g.clone();
                        for r in 0..y.rows() {
                            let mut gsum = T::zero();
                            for c in 0..y.cols() {
                                gsum += g.at(r, c);
                            }
                            for c in 0..y.cols() {
                                *da.at_mut(r, c) = g.at(r, c) - y.at(r, c).exp() * gsum;
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::LayerNorm(a, eps) => {
                    if self.nodes[*a].requires_grad {
                        let x = &self.nodes[*a].value;
                        let y = &node.value;
                        let cols = x.cols();
                        let cn = T::of(cols as f64);
                        let mut da = g.clone();
                        for r in 0..x.rows() {
                            let mut mean = T::zero();
                            for c in 0..cols {
                                mean += x.at(r, c);
                            }
                            mean /= cn;
                            let mut var = T::zero();
                            for c in 0..cols {
                                var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
                            }
                            var /= cn;
                            let inv = T::one() / (var + *eps).sqrt();
                            let mut g_mean = T::zero();
                            let mut gy_mean = T::zero();
                            for c in 0..cols {
                                g_mean += g.at(r, c);
                                gy_mean += g.at(r, c) * y.at(r, c);
                            }
                            g_mean /= cn;
                            gy_mean /= cn;
                            for c in 0..cols {
                                *da.at_mut(r, c) =
                                    inv * (g.at(r, c) - g_mean - y.at(r, c) * gy_mean);
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::Relu(a) => {
                    if self.nodes[*a].requires_grad {
                        let x = &self.nodes[*a].value;
                        let da = Tensor::new(
                            x.shape().to_vec(),
                            x.data()
                                .iter()
                                .zip(g.data())
                                .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                                .collect(),
                        )
                        .expect("relu gradient shape matches input");
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                    if self.nodes[*a].requires_grad {
                        let shape = self.nodes[*a].value.shape();
                        let (rows, cols) = (shape[0], shape[1]);
                        let scale = match node.op {
                            Op::MeanAxis(_, ax) => {
                                T::one() / T::of(if ax == 0 { rows } else { cols } as f64)
                            }
                            _ => T::one(),
                        };
                        let mut da = Tensor::zeros(shape);
                        for r in 0..rows {
                            for c in 0..cols {
                                let slot = if *axis == 0 { c } else { r };
                                *da.at_mut(r, c) = g.data()[slot] * scale;
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::SumAll(a) | Op::MeanAll(a) => {
                    if self.nodes[*a].requires_grad {
                        let shape = self.nodes[*a].value.shape();
                        let n = self.nodes[*a].value.len();
                        let scale = match node.op {
                            Op::MeanAll(_) => T::one() / T::of(n as f64),
                            _ => T::one(),
                        };
                        let da = Tensor::filled(shape, g.item() * scale);
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::L2NormalizeRows(a, _) => {
                    if self.nodes[*a].requires_grad {
                        let x = &self.nodes[*a].value;
                        let y = &node.value;
                        let mut da = g.clone();
                        for r in 0..x.rows() {
                            // y = x·s with s = (Σx²+eps)^(-1/2); recover s
                            // from any nonzero coordinate, else from scratch.
                            let mut gy = T::zero();
                            for c in 0..x.cols() {
                                gy += g.at(r, c) * y.at(r, c);
                            }
                            let s = row_inv_norm(x.row(r), node_eps(&node.op));
                            for c in 0..x.cols() {
                                *da.at_mut(r, c) = s * (g.at(r, c) - y.at(r, c) * gy);
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::Log(a) => {
                    if self.nodes[*a].requires_grad {
                        let x = &self.nodes[*a].value;
                        accumulate(&mut before[*a], zip(g, x, |gv, xv| gv / xv));
                    }
                }
                Op::Exp(a) => {
                    if self.nodes[*a].requires_grad {
                        accumulate(&mut before[*a], zip(g, &node.value, |gv, yv| gv * yv));
                    }
                }
                Op::Transpose(a) => {
                    if self.nodes[*a].requires_grad {
                        let mut da = Tensor::zeros(self.nodes[*a].value.shape());
                        for r in 0..g.rows() {
                            for c in 0..g.cols() {
                                *da.at_mut(c, r) = g.at(r, c);
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                }
                Op::GatherRows(a, idx) => {
                    if self.nodes[*a].requires_grad {
                        let mut da = Tensor::zeros(self.nodes[*a].value.shape());
                        for (r, &i) in idx.iter().enumerate() {
                            for c in 0..g.cols() {
                                *da.at_mut(i, c) += g.at(r, c);
                            }
                        }
                        accumulate(&mut before[*a], da);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradient table produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, zero-filled when the loss does not reach it.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

fn node_eps<T: Scalar>(op: &Op<T>) -> T {
    match op {
        Op::L2NormalizeRows(_, eps) | Op::LayerNorm(_, eps) => *eps,
        _ => T::zero(),
    }
}

fn row_inv_norm<T: Scalar>(row: &[T], eps: T) -> T {
    let mut ss = T::zero();
    for &x in row {
        ss += x * x;
    }
    T::one() / (ss + eps).sqrt()
}

fn row_max<T: Scalar>(row: &[T]) -> T {
    let mut m = row[0];
    for &x in &row[1..] {
        if x > m {
            m = x;
        }
    }
    m
}

/// Stable softmax of a full row.
fn softmax_row_full<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row_max(row);
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Stable softmax restricted to entries where the mask is nonzero; the rest
/// become exact zeros. Returns `None` when the support is empty. With an
/// all-ones mask this performs the same arithmetic as [`softmax_row_full`],
/// so the two agree bit-for-bit.
fn softmax_row_masked<T: Scalar>(row: &[T], mask: &[T], out: &mut [T]) -> Option<()> {
    let mut max: Option<T> = None;
    for (&x, &m) in row.iter().zip(mask) {
        if m != T::zero() {
            max = Some(match max {
                Some(cur) if cur >= x => cur,
                _ => x,
            });
        }
    }
    let max = max?;
    let mut sum = T::zero();
    for ((o, &x), &m) in out.iter_mut().zip(row).zip(mask) {
        if m != T::zero() {
            let e = (x - max).exp();
            *o = e;
            sum += e;
        } else {
            *o = T::zero();
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m != T::zero() {
            *o /= sum;
        }
    }
    Some(())
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("zip preserves shape")
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), delta.shape());
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += *d;
            }
        }
        None => *slot = Some(delta),
    }
}

/// `[r,k]·[k,c]`.
fn mm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (r, k, c) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        for kk in 0..k {
            let aik = a.at(i, kk);
            if aik == T::zero() {
                continue;
            }
            let brow = b.row(kk);
            let orow = out.row_mut(i);
            for j in 0..c {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

/// `a·bᵀ` with `a: [r,k]`, `b: [c,k]`.
fn mm_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (r, k, c) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(k, b.cols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let arow = a.row(i);
        for j in 0..c {
            let brow = b.row(j);
            let mut s = T::zero();
            for kk in 0..k {
                s += arow[kk] * brow[kk];
            }
            *out.at_mut(i, j) = s;
        }
    }
    out
}

/// `aᵀ·b` with `a: [k,r]`, `b: [k,c]`.
fn mm_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (k, r, c) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(k, b.rows());
    let mut out = Tensor::zeros(&[r, c]);
    for kk in 0..k {
        let arow = a.row(kk);
        let brow = b.row(kk);
        for (i, &aki) in arow.iter().enumerate() {
            if aki == T::zero() {
                continue;
            }
            let orow = out.row_mut(i);
            for j in 0..c {
                orow[j] += aki * brow[j];
            }
        }
    }
    out
}

/// Central-difference gradient check. Runs `program` once with parameter
/// leaves to get analytic gradients, then re-evaluates it on perturbed
/// constant inputs coordinate by coordinate. Returns the worst relative
/// error `|a−n| / max(1e−8, |a|+|n|)` over all input coordinates.
///
/// `program` must be deterministic: freeze any stochastic masks before
/// checking.
pub fn check_gradients<T, F>(program: F, inputs: &[Tensor<T>], eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = program(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::NotScalar(tape.value(loss).shape().to_vec()));
    }
    let grads = tape.backward(loss)?;

    let eval = |work: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = work.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = program(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut work = inputs.to_vec();
    let mut worst = T::zero();
    for (pi, input) in inputs.iter().enumerate() {
        for ci in 0..input.len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (up - down) / (T::of(2.0) * eps);
            let analytic = grads
                .get(vars[pi])
                .map_or(T::zero(), |t| t.data()[ci]);
            let denom = (analytic.abs() + numeric.abs()).max(T::of(1e-8));
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// Runs the central-difference check (eps 1e-5) over every cataloged op on
/// seeded random inputs, weighting each op's output by a random constant so
/// non-uniform cotangents reach the backward rules. Returns
/// `(op name, max relative error)` pairs in a fixed order.
pub fn op_gradient_checks(seed: u64) -> Result<Vec<(String, f64)>> {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5;
    let mut report: Vec<(String, f64)> = Vec::new();

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
        let data = (0..r * c).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(vec![r, c], data).expect("random matrix shape")
    }
    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Tensor<f64> {
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(vec![n], data).expect("random vector shape")
    }
    /// Magnitudes in [0.1, 1] with random sign: keeps relu and l2 rows away
    /// from their non-smooth points under the finite-difference step.
    fn rand_signed(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        let data = (0..r * c)
            .map(|_| {
                let m: f64 = rng.gen_range(0.1..1.0);
                if rng.gen::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::new(vec![r, c], data).expect("random matrix shape")
    }

    // Weighted scalar readout: sum(op_output ⊙ w).
    fn weigh(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv)?;
        tape.sum_all(p)
    }

    {
        let a = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let b = rand_mat(&mut rng, 4, 2, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 2, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weigh(t, y, &w)
            },
            &[a, b],
            eps,
        )?;
        report.push(("matmul".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let b = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        for (name, which) in [("add", 0), ("subtract", 1), ("elementwise-multiply", 2)] {
            let err = check_gradients(
                |t, v| {
                    let y = match which {
                        0 => t.add(v[0], v[1])?,
                        1 => t.sub(v[0], v[1])?,
                        _ => t.mul(v[0], v[1])?,
                    };
                    weigh(t, y, &w)
                },
                &[a.clone(), b.clone()],
                eps,
            )?;
            report.push((name.into(), err));
        }
    }
    {
        let a = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.scale(v[0], -1.7)?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("scale-by-constant".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let b = rand_vec(&mut rng, 4, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.add_row(v[0], v[1])?;
                weigh(t, y, &w)
            },
            &[a.clone(), b.clone()],
            eps,
        )?;
        report.push(("add-row".into(), err));
        let err = check_gradients(
            |t, v| {
                let y = t.mul_row(v[0], v[1])?;
                weigh(t, y, &w)
            },
            &[a, b],
            eps,
        )?;
        report.push(("mul-row".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 2, 3, -1.0, 1.0);
        let b = rand_mat(&mut rng, 1, 3, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 3, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.concat(&[v[0], v[1]], 0)?;
                weigh(t, y, &w)
            },
            &[a, b],
            eps,
        )?;
        report.push(("concat-along-axis-0".into(), err));
        let a = rand_mat(&mut rng, 3, 2, -1.0, 1.0);
        let b = rand_mat(&mut rng, 3, 2, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.concat(&[v[0], v[1]], 1)?;
                weigh(t, y, &w)
            },
            &[a, b],
            eps,
        )?;
        report.push(("concat-along-axis-1".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let w = rand_mat(&mut rng, 2, 6, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.reshape(v[0], &[2, 6])?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("reshape".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 2, 5, -2.0, 2.0);
        let w = rand_mat(&mut rng, 2, 5, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.row_softmax(v[0])?;
                weigh(t, y, &w)
            },
            std::slice::from_ref(&a),
            eps,
        )?;
        report.push(("row-softmax".into(), err));
        let mask =
            Tensor::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0, 0.0, 1.0]])
                .expect("mask shape");
        let err = check_gradients(
            |t, v| {
                let y = t.masked_row_softmax(v[0], &mask)?;
                weigh(t, y, &w)
            },
            std::slice::from_ref(&a),
            eps,
        )?;
        report.push(("masked-row-softmax".into(), err));
        let err = check_gradients(
            |t, v| {
                let y = t.row_log_softmax(v[0])?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("row-log-softmax".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 3, 6, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 6, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.layer_norm(v[0], 1e-5)?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("layer-normalize".into(), err));
    }
    {
        let a = rand_signed(&mut rng, 3, 4);
        let w = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.relu(v[0])?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("relu".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        for axis in 0..2 {
            let w = rand_vec(&mut rng, if axis == 0 { 4 } else { 3 }, -1.0, 1.0);
            let err = check_gradients(
                |t, v| {
                    let y = t.sum_axis(v[0], axis)?;
                    weigh(t, y, &w)
                },
                std::slice::from_ref(&a),
                eps,
            )?;
            report.push((format!("sum-over-axis-{axis}"), err));
            let err = check_gradients(
                |t, v| {
                    let y = t.mean_axis(v[0], axis)?;
                    weigh(t, y, &w)
                },
                std::slice::from_ref(&a),
                eps,
            )?;
            report.push((format!("mean-over-axis-{axis}"), err));
        }
        let err = check_gradients(
            |t, v| {
                let y = t.sum_all(v[0])?;
                t.scale(y, 0.7)
            },
            std::slice::from_ref(&a),
            eps,
        )?;
        report.push(("sum-all".into(), err));
        let err = check_gradients(
            |t, v| {
                let y = t.mean_all(v[0])?;
                t.scale(y, 0.7)
            },
            &[a],
            eps,
        )?;
        report.push(("mean-all".into(), err));
    }
    {
        let a = rand_signed(&mut rng, 2, 4);
        let w = rand_mat(&mut rng, 2, 4, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.l2_normalize_rows(v[0], 1e-12)?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("l2-normalize-rows".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 3, 3, 0.2, 2.0);
        let w = rand_mat(&mut rng, 3, 3, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.log(v[0])?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("log".into(), err));
        let a = rand_mat(&mut rng, 3, 3, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.exp(v[0])?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("exp".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let w = rand_mat(&mut rng, 4, 3, -1.0, 1.0);
        let err = check_gradients(
            |t, v| {
                let y = t.transpose(v[0])?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("transpose".into(), err));
    }
    {
        let a = rand_mat(&mut rng, 5, 3, -1.0, 1.0);
        let w = rand_mat(&mut rng, 4, 3, -1.0, 1.0);
        let idx = [0usize, 2, 2, 4];
        let err = check_gradients(
            |t, v| {
                let y = t.gather_rows(v[0], &idx)?;
                weigh(t, y, &w)
            },
            &[a],
            eps,
        )?;
        report.push(("gather-rows".into(), err));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
        let loss = tape.sum_all(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::filled(&[2, 2], 1.0));
    }

    #[test]
    fn half_square_gradient_is_input() {
        let input = t(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let mut tape = Tape::new();
        let x = tape.param(input.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &input);
    }

    #[test]
    fn matmul_matches_schoolbook() {
        let a = t(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let b = t(&[vec![7.0, 8.0], vec![9.0, 10.0], vec![11.0, 12.0]]);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let c = tape.matmul(va, vb).unwrap();
        let want = t(&[vec![58.0, 64.0], vec![139.0, 154.0]]);
        assert_eq!(tape.value(c), &want);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn uniform_logits_softmax() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![0.0, 0.0, 0.0]]));
        let y = tape.row_softmax(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let row = vec![0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = row.iter().map(|v| v + 7.25).collect();
        let mut tape = Tape::new();
        let a = tape.constant(t(&[row]));
        let b = tape.constant(t(&[shifted]));
        let ya = tape.row_softmax(a).unwrap();
        let yb = tape.row_softmax(b).unwrap();
        for (x, y) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![3.0, 4.0]]));
        let y = tape.l2_normalize_rows(x, 1e-12).unwrap();
        let got = tape.value(y);
        assert!((got.at(0, 0) - 0.6).abs() < 1e-9);
        assert!((got.at(0, 1) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn masked_softmax_support_and_empty_row() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![2.0, 5.0, -1.0]]));
        let mask = t(&[vec![1.0, 0.0, 1.0]]);
        let y = tape.masked_row_softmax(x, &mask).unwrap();
        let got = tape.value(y);
        assert_eq!(got.at(0, 1), 0.0);
        let sum: f64 = got.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // exp(2)/(exp(2)+exp(-1)) against the restricted softmax.
        let want = (2.0f64).exp() / ((2.0f64).exp() + (-1.0f64).exp());
        assert!((got.at(0, 0) - want).abs() < 1e-12);

        let empty = t(&[vec![0.0, 0.0, 0.0]]);
        match tape.masked_row_softmax(x, &empty) {
            Err(Error::EmptyMaskRow { row: 0 }) => {}
            other => panic!("expected empty-mask error, got {other:?}"),
        }
    }

    #[test]
    fn masked_softmax_with_full_mask_is_bitwise_plain() {
        let rows = t(&[vec![0.31, -2.2, 1.7], vec![5.0, 5.0, -5.0]]);
        let mut tape = Tape::new();
        let x = tape.constant(rows.clone());
        let plain = tape.row_softmax(x).unwrap();
        let ones = Tensor::filled(&[2, 3], 1.0);
        let masked = tape.masked_row_softmax(x, &ones).unwrap();
        assert_eq!(tape.value(plain).data(), tape.value(masked).data());
    }

    #[test]
    fn log_of_negative_is_numeric_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![-1.0]]));
        match tape.log(x) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "log"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, 2.0]]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn gather_rows_accumulates_repeats() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let g = tape.gather_rows(x, &[0, 0, 1]).unwrap();
        let loss = tape.sum_all(g).unwrap();
        let grads = tape.backward(loss).unwrap();
        let want = t(&[vec![2.0, 2.0], vec![1.0, 1.0]]);
        assert_eq!(grads.get(x).unwrap(), &want);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, 2.0]]));
        let c = tape.constant(t(&[vec![3.0, 4.0]]));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &t(&[vec![3.0, 4.0]]));
    }

    #[test]
    fn fan_out_gradients_sum() {
        // loss = sum(x + x) -> dL/dx = 2.
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, 2.0]]));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &t(&[vec![2.0, 2.0]]));
    }

    #[test]
    fn linear_map_gradient_check_is_tight() {
        let w = t(&[vec![0.2, -0.4, 0.9], vec![1.1, 0.3, -0.7]]);
        let x = t(&[vec![0.5], vec![-0.25], vec![0.75]]);
        let err = check_gradients(
            |tape, vars| {
                let y = tape.matmul(vars[0], vars[1])?;
                tape.sum_all(y)
            },
            &[w, x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "relative error {err}");
    }

    #[test]
    fn repeat_runs_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.param(t(&[vec![0.3, -0.8, 1.4], vec![0.1, 0.0, -2.0]]));
            let s = tape.row_softmax(x).unwrap();
            let n = tape.layer_norm(s, 1e-5).unwrap();
            let loss = tape.mean_all(n).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).item(),
                grads.get(x).unwrap().data().to_vec(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
