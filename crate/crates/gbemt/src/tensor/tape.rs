//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its value and parent ids, so the
//! tape is topologically ordered by construction. `backward` walks it once
//! in reverse and accumulates gradients; each op is small enough to be
//! gradient-checked against central finite differences in isolation.

use crate::error::{Error, Result};
use crate::tensor::{BoolMat, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// (m,k) x (k,n)
    Matmul(usize, usize),
    /// (m,k) x (n,k)^T
    MatmulNT(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddConst(usize),
    MulConst(usize, Tensor),
    Scale(usize, f64),
    /// matrix (m,n) + bias [n] broadcast over rows
    AddBias(usize, usize),
    Relu(usize),
    /// Row softmax restricted to mask-true entries; all-false rows yield
    /// zero vectors. Equivalent to adding a large negative penalty to
    /// masked scores, without the NaN hazards.
    MaskedSoftmaxRows(usize),
    /// (x, gain, bias); per-row normalization over the last axis with
    /// biased variance.
    LayerNormRows(usize, usize, usize, f64),
    /// Row gather from an embedding table.
    Embed(usize, Vec<u32>),
    SliceCols(usize, usize, usize),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize, usize),
    ConcatRows(Vec<usize>),
    Sum(usize),
    /// Summed label-smoothed cross entropy over non-pad rows of (n,V)
    /// logits.
    CrossEntropySum {
        logits: usize,
        targets: Vec<u32>,
        pad_id: u32,
        smoothing: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients returned by [`Tape::backward`]; populated for leaf nodes that
/// require gradients (intermediate buffers are freed during the sweep).
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Recorded computation. Confined to one logical thread; independent tapes
/// may run in parallel.
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Record an input. Parameters use `requires_grad = true`; constants
    /// (positional encodings, masks-as-tensors) use `false`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul(a.0, b.0), value, self.needs(&[a.0, b.0])))
    }

    /// `a x b^T`; the usual shape for attention scores and tied output
    /// projections.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(Op::MatmulNT(a.0, b.0), value, self.needs(&[a.0, b.0])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add shapes differ: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_in_place(self.value(b));
        Ok(self.push(Op::Add(a.0, b.0), value, self.needs(&[a.0, b.0])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "mul shapes differ: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a.0, b.0), value, self.needs(&[a.0, b.0])))
    }

    pub fn add_const(&mut self, a: Var, constant: Tensor) -> Result<Var> {
        if self.value(a).shape() != constant.shape() {
            return Err(Error::Shape(format!(
                "add_const shapes differ: {:?} vs {:?}",
                self.value(a).shape(),
                constant.shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_in_place(&constant);
        let needs = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::AddConst(a.0), value, needs))
    }

    pub fn mul_const(&mut self, a: Var, constant: Tensor) -> Result<Var> {
        if self.value(a).shape() != constant.shape() {
            return Err(Error::Shape(format!(
                "mul_const shapes differ: {:?} vs {:?}",
                self.value(a).shape(),
                constant.shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(constant.data())
            .map(|(&x, &c)| x * c)
            .collect();
        let value = Tensor::new(constant.shape().to_vec(), data)?;
        let needs = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::MulConst(a.0, constant), value, needs))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let needs = self.nodes[a.0].requires_grad;
        self.push(Op::Scale(a.0, factor), value, needs)
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = match self.value(a).shape() {
            [r, c] => (*r, *c),
            other => return Err(Error::Shape(format!("add_bias expects a matrix, got {other:?}"))),
        };
        if self.value(bias).shape() != [cols] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {cols} columns",
                self.value(bias).shape()
            )));
        }
        let mut data = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for r in 0..rows {
            for (v, &bv) in data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::AddBias(a.0, bias.0), value, self.needs(&[a.0, bias.0])))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let needs = self.nodes[a.0].requires_grad;
        self.push(Op::Relu(a.0), value, needs)
    }

    pub fn masked_softmax_rows(&mut self, a: Var, mask: BoolMat) -> Result<Var> {
        let (rows, cols) = match self.value(a).shape() {
            [r, c] => (*r, *c),
            other => {
                return Err(Error::Shape(format!(
                    "masked_softmax_rows expects a matrix, got {other:?}"
                )))
            }
        };
        if mask.rows() != rows || mask.cols() != cols {
            return Err(Error::Shape(format!(
                "mask {}x{} does not match scores {rows}x{cols}",
                mask.rows(),
                mask.cols()
            )));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let mrow = mask.row(r);
            let mut max = f64::NEG_INFINITY;
            for (v, &keep) in row.iter().zip(mrow) {
                if keep && *v > max {
                    max = *v;
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays a zero vector
            }
            let out_row = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for ((o, &v), &keep) in out_row.iter_mut().zip(row).zip(mrow) {
                if keep {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            for o in out_row.iter_mut() {
                *o /= sum;
            }
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        let needs = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::MaskedSoftmaxRows(a.0), value, needs))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = match self.value(x).shape() {
            [r, c] => (*r, *c),
            other => return Err(Error::Shape(format!("layer_norm expects a matrix, got {other:?}"))),
        };
        for v in [gain, bias] {
            if self.value(v).shape() != [cols] {
                return Err(Error::Shape(format!(
                    "layer norm gain/bias shape {:?} does not match {cols} columns",
                    self.value(v).shape()
                )));
            }
        }
        let data = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &data[r * cols..(r + 1) * cols];
            let (mean, inv_std) = row_moments(row, eps);
            for (j, (&v, o)) in row.iter().zip(&mut out[r * cols..(r + 1) * cols]).enumerate() {
                *o = (v - mean) * inv_std * g[j] + b[j];
            }
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        let needs = self.needs(&[x.0, gain.0, bias.0]);
        Ok(self.push(Op::LayerNormRows(x.0, gain.0, bias.0, eps), value, needs))
    }

    pub fn embed(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (vocab, dim) = match self.value(table).shape() {
            [v, d] => (*v, *d),
            other => return Err(Error::Shape(format!("embed expects a matrix table, got {other:?}"))),
        };
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id as usize >= vocab {
                return Err(Error::VocabId { id, vocab });
            }
            data.extend_from_slice(&self.value(table).data()[id as usize * dim..(id as usize + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], data)?;
        let needs = self.nodes[table.0].requires_grad;
        Ok(self.push(Op::Embed(table.0, ids.to_vec()), value, needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = match self.value(a).shape() {
            [r, c] => (*r, *c),
            other => return Err(Error::Shape(format!("slice_cols expects a matrix, got {other:?}"))),
        };
        if start > end || end > cols {
            return Err(Error::Shape(format!(
                "column slice {start}..{end} out of range for {cols} columns"
            )));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&self.value(a).data()[r * cols + start..r * cols + end]);
        }
        let value = Tensor::new(vec![rows, width], data)?;
        let needs = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::SliceCols(a.0, start, end), value, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero parts".into()));
        }
        let rows = self.value(parts[0]).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.value(p).shape() {
                [r, c] if *r == rows => widths.push(*c),
                other => {
                    return Err(Error::Shape(format!(
                        "concat_cols expects matrices with {rows} rows, got {other:?}"
                    )))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.needs(&ids);
        Ok(self.push(Op::ConcatCols(ids), value, needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = match self.value(a).shape() {
            [r, c] => (*r, *c),
            other => return Err(Error::Shape(format!("slice_rows expects a matrix, got {other:?}"))),
        };
        if start > end || end > rows {
            return Err(Error::Shape(format!(
                "row slice {start}..{end} out of range for {rows} rows"
            )));
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        let value = Tensor::new(vec![end - start, cols], data)?;
        let needs = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::SliceRows(a.0, start, end), value, needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of zero parts".into()));
        }
        let cols = self.value(parts[0]).shape()[1];
        let mut data = Vec::new();
        let mut heights = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.value(p).shape() {
                [r, c] if *c == cols => {
                    heights.push(*r);
                    data.extend_from_slice(self.value(p).data());
                }
                other => {
                    return Err(Error::Shape(format!(
                        "concat_rows expects matrices with {cols} columns, got {other:?}"
                    )))
                }
            }
        }
        let total: usize = heights.iter().sum();
        let value = Tensor::new(vec![total, cols], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.needs(&ids);
        Ok(self.push(Op::ConcatRows(ids), value, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        let needs = self.nodes[a.0].requires_grad;
        self.push(Op::Sum(a.0), Tensor::scalar(total), needs)
    }

    /// Label-smoothed cross entropy summed over rows whose target is not
    /// `pad_id`. Returns the scalar node and the number of counted rows.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[u32],
        pad_id: u32,
        smoothing: f64,
    ) -> Result<(Var, usize)> {
        let (rows, vocab) = match self.value(logits).shape() {
            [r, c] => (*r, *c),
            other => {
                return Err(Error::Shape(format!(
                    "cross_entropy expects (rows, vocab) logits, got {other:?}"
                )))
            }
        };
        if targets.len() != rows {
            return Err(Error::Shape(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        let mut total = 0.0;
        let mut counted = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if t == pad_id {
                continue;
            }
            if t as usize >= vocab {
                return Err(Error::VocabId { id: t, vocab });
            }
            let row = &self.value(logits).data()[r * vocab..(r + 1) * vocab];
            total += smoothed_nll(row, t as usize, smoothing);
            counted += 1;
        }
        if counted == 0 {
            return Err(Error::DegenerateBatch);
        }
        let needs = self.nodes[logits.0].requires_grad;
        let var = self.push(
            Op::CrossEntropySum {
                logits: logits.0,
                targets: targets.to_vec(),
                pad_id,
                smoothing,
            },
            Tensor::scalar(total),
            needs,
        );
        Ok((var, counted))
    }

    /// Reverse sweep from a scalar loss. Consumes the tape's gradient pass:
    /// calling it a second time is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.spent = true;

        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || grads[id].is_none() {
                continue;
            }
            let (before, rest) = grads.split_at_mut(id);
            let g = rest[0].as_ref().expect("checked above");
            self.propagate(id, g, before)?;
            if !matches!(self.nodes[id].op, Op::Leaf) {
                rest[0] = None; // free intermediate buffers early
            }
        }
        Ok(Gradients { grads })
    }

    /// Add this node's contribution to its parents' gradients. `before`
    /// holds the gradient slots of all earlier nodes (parents always
    /// precede children on the tape).
    fn propagate(&self, id: usize, g: &Tensor, before: &mut [Option<Tensor>]) -> Result<()> {
        let send = |parent: usize, delta: Tensor, before: &mut [Option<Tensor>]| {
            if !self.nodes[parent].requires_grad {
                return;
            }
            match &mut before[parent] {
                Some(t) => t.add_in_place(&delta),
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                send(*a, g.matmul_nt(&self.nodes[*b].value)?, before);
                send(*b, self.nodes[*a].value.matmul_tn(g)?, before);
            }
            Op::MatmulNT(a, b) => {
                // c = a b^T: da = g b, db = g^T a.
                send(*a, g.matmul(&self.nodes[*b].value)?, before);
                send(*b, g.matmul_tn(&self.nodes[*a].value)?, before);
            }
            Op::Add(a, b) => {
                send(*a, g.clone(), before);
                send(*b, g.clone(), before);
            }
            Op::Mul(a, b) => {
                send(*a, elementwise_product(g, &self.nodes[*b].value), before);
                send(*b, elementwise_product(g, &self.nodes[*a].value), before);
            }
            Op::AddConst(a) => send(*a, g.clone(), before),
            Op::MulConst(a, c) => send(*a, elementwise_product(g, c), before),
            Op::Scale(a, s) => {
                let data = g.data().iter().map(|&v| v * s).collect();
                send(*a, Tensor::new(g.shape().to_vec(), data)?, before);
            }
            Op::AddBias(a, bias) => {
                send(*a, g.clone(), before);
                let cols = self.nodes[*bias].value.len();
                let mut b_grad = vec![0.0; cols];
                for row in g.data().chunks_exact(cols) {
                    for (bg, &v) in b_grad.iter_mut().zip(row) {
                        *bg += v;
                    }
                }
                send(*bias, Tensor::new(vec![cols], b_grad)?, before);
            }
            Op::Relu(a) => {
                let data = self.nodes[*a]
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                send(*a, Tensor::new(g.shape().to_vec(), data)?, before);
            }
            Op::MaskedSoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let cols = y.shape()[1];
                let mut out = vec![0.0; y.len()];
                for ((orow, yrow), grow) in out
                    .chunks_exact_mut(cols)
                    .zip(y.data().chunks_exact(cols))
                    .zip(g.data().chunks_exact(cols))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                    for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                        *o = yv * (gv - dot);
                    }
                }
                send(*a, Tensor::new(y.shape().to_vec(), out)?, before);
            }
            Op::LayerNormRows(x, gain, bias, eps) => {
                let xv = &self.nodes[*x].value;
                let gv = self.nodes[*gain].value.data();
                let cols = xv.shape()[1];
                let rows = xv.shape()[0];
                let mut dx = vec![0.0; xv.len()];
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for r in 0..rows {
                    let row = &xv.data()[r * cols..(r + 1) * cols];
                    let grow = &g.data()[r * cols..(r + 1) * cols];
                    let (mean, inv_std) = row_moments(row, *eps);
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = grow.iter().zip(gv).map(|(&gr, &ga)| gr * ga).collect();
                    let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dxhat_xhat: f64 =
                        dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                        dx[r * cols + j] = inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                send(*x, Tensor::new(vec![rows, cols], dx)?, before);
                send(*gain, Tensor::new(vec![cols], dgain)?, before);
                send(*bias, Tensor::new(vec![cols], dbias)?, before);
            }
            Op::Embed(table, ids) => {
                let shape = self.nodes[*table].value.shape().to_vec();
                let dim = shape[1];
                let mut dt = vec![0.0; shape[0] * dim];
                for (row, &tok) in g.data().chunks_exact(dim).zip(ids) {
                    let base = tok as usize * dim;
                    for (slot, &v) in dt[base..base + dim].iter_mut().zip(row) {
                        *slot += v;
                    }
                }
                send(*table, Tensor::new(shape, dt)?, before);
            }
            Op::SliceCols(a, start, end) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                let (rows, cols) = (shape[0], shape[1]);
                let width = end - start;
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    da[r * cols + start..r * cols + end]
                        .copy_from_slice(&g.data()[r * width..(r + 1) * width]);
                }
                send(*a, Tensor::new(shape, da)?, before);
            }
            Op::ConcatCols(parts) => {
                let rows = self.nodes[id].value.shape()[0];
                let total = self.nodes[id].value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.shape()[1];
                    if self.nodes[p].requires_grad {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        send(p, Tensor::new(vec![rows, w], dp)?, before);
                    }
                    offset += w;
                }
            }
            Op::SliceRows(a, start, end) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                let cols = shape[1];
                let mut da = vec![0.0; shape[0] * cols];
                da[start * cols..end * cols].copy_from_slice(g.data());
                send(*a, Tensor::new(shape, da)?, before);
            }
            Op::ConcatRows(parts) => {
                let cols = self.nodes[id].value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let h = self.nodes[p].value.shape()[0];
                    if self.nodes[p].requires_grad {
                        let dp = g.data()[offset * cols..(offset + h) * cols].to_vec();
                        send(p, Tensor::new(vec![h, cols], dp)?, before);
                    }
                    offset += h;
                }
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                let len = self.nodes[*a].value.len();
                send(*a, Tensor::new(shape, vec![g.data()[0]; len])?, before);
            }
            Op::CrossEntropySum {
                logits,
                targets,
                pad_id,
                smoothing,
            } => {
                let lv = &self.nodes[*logits].value;
                let vocab = lv.shape()[1];
                let scale = g.data()[0];
                let mut dl = vec![0.0; lv.len()];
                for (r, &t) in targets.iter().enumerate() {
                    if t == *pad_id {
                        continue;
                    }
                    let row = &lv.data()[r * vocab..(r + 1) * vocab];
                    let probs = stable_softmax(row);
                    let uniform = smoothing / vocab as f64;
                    for (j, (slot, p)) in dl[r * vocab..(r + 1) * vocab].iter_mut().zip(probs).enumerate() {
                        let q = if j == t as usize {
                            1.0 - smoothing + uniform
                        } else {
                            uniform
                        };
                        *slot = scale * (p - q);
                    }
                }
                send(*logits, Tensor::new(lv.shape().to_vec(), dl)?, before);
            }
        }
        Ok(())
    }
}

fn elementwise_product(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn stable_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss of one row: `-sum_k q_k log p_k` with
/// `q = (1-eps) one_hot + eps/V`, computed in log space.
fn smoothed_nll(row: &[f64], target: usize, smoothing: f64) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let log_p = |j: usize| row[j] - max - log_z;
    let mut loss = -(1.0 - smoothing) * log_p(target);
    if smoothing > 0.0 {
        let uniform = smoothing / row.len() as f64;
        loss -= uniform * (0..row.len()).map(log_p).sum::<f64>();
    }
    loss
}
