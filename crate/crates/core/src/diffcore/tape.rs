//! Wengert-list reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! list in reverse index order, which is a valid reverse topological order
//! because a node can only reference earlier nodes. Gradient accumulation
//! order is therefore fixed and results are bit-reproducible.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Var, Var),
    BroadcastRows(Var),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    L2NormalizeRows(Var),
    SoftmaxRows(Var, f64),
    CrossEntropy(Var, Vec<usize>),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    FrobeniusSq(Var),
    MeanSquare(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| Error::shape(op, format!("rank > 2: {:?}", t.shape())))
}

/// How the right operand of a binary elementwise op lines up with the left.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

fn bcast(a: &Tensor, b: &Tensor, op: &'static str) -> Result<Bcast> {
    if a.shape() == b.shape() {
        return Ok(Bcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Bcast::Scalar);
    }
    let (_, ac) = dims(a, op)?;
    let (br, bc) = dims(b, op)?;
    if br == 1 && bc == ac {
        return Ok(Bcast::Row);
    }
    Err(Error::shape(
        op,
        format!("{:?} vs {:?}", a.shape(), b.shape()),
    ))
}

fn b_index(mode: Bcast, i: usize, cols: usize) -> usize {
    match mode {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Scalar => 0,
    }
}

fn reduce_to(mode: Bcast, g: &[f64], b_len: usize, cols: usize) -> Vec<f64> {
    match mode {
        Bcast::Same => g.to_vec(),
        _ => {
            let mut out = vec![0.0; b_len];
            for (i, v) in g.iter().enumerate() {
                out[b_index(mode, i, cols)] += v;
            }
            out
        }
    }
}

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

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn softmax_row(x: &[f64], tau: f64, out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = ((v - max) / tau).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a leaf; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        let mut value = t.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, rg)
    }

    /// Registers a differentiable leaf regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone().with_grad(true);
        value.clear_grad();
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone().with_grad(false);
        value.clear_grad();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a), "matmul")?;
        let (k2, n) = dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mode = bcast(ta, tb, op)?;
        let cols = ta.cols().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[b_index(mode, i, cols)]))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, node, rg))
    }

    /// Elementwise sum; `b` may be a row vector or scalar broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, node, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = dims(self.value(a), "concat")?;
        let (rb, cb) = dims(self.value(b), "concat")?;
        if ra != rb {
            return Err(Error::shape(
                "concat",
                format!("{:?} ++ {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![ra, ca + cb], data)?,
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a), "broadcast_rows")?;
        if r != 1 {
            return Err(Error::shape(
                "broadcast_rows",
                format!("expected one row, got {:?}", self.value(a).shape()),
            ));
        }
        let row = self.value(a).data().to_vec();
        let data = row.iter().cycle().take(n * c).cloned().collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, c], data)?, Op::BroadcastRows(a), rg))
    }

    /// Gathers rows by index (indices may repeat).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.value(a), "select_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::shape(
                    "select_rows",
                    format!("row {} of {:?}", i, self.value(a).shape()),
                ));
            }
            data.extend_from_slice(self.value(a).row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![idx.len(), c], data)?,
            Op::SelectRows(a, idx.to_vec()),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a), "transpose")?;
        let data = transpose_raw(self.value(a).data(), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a), rg))
    }

    /// Scales each row to unit L2 norm. A zero row is an error.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = dims(t, "l2_normalize")?;
        let mut data = t.data().to_vec();
        let c = t.cols();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            // Overflowed norms pass through so divergence shows up as a
            // non-finite loss rather than a degenerate input.
            if norm == 0.0 {
                return Err(Error::DegenerateVector { op: "l2_normalize" });
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::L2NormalizeRows(a), rg))
    }

    /// Row-wise `softmax(x / tau)`.
    pub fn softmax(&mut self, a: Var, tau: f64) -> Result<Var> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "softmax temperature must be positive, got {tau}"
            )));
        }
        let t = self.value(a);
        let (r, c) = dims(t, "softmax")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(t.row(i), tau, &mut data[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SoftmaxRows(a, tau), rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (r, c) = dims(t, "cross_entropy")?;
        if labels.len() != r {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for logits {:?}", labels.len(), t.shape()),
            ));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: c,
                });
            }
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / r as f64),
            Op::CrossEntropy(logits, labels.to_vec()),
            rg,
        ))
    }

    /// Row sums as an `[rows, 1]` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = dims(t, "sum_cols")?;
        let data = (0..r).map(|i| t.row(i).iter().sum()).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![r, 1], data)?, Op::SumCols(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn frobenius_norm_squared(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::FrobeniusSq(a), rg)
    }

    /// Mean of squared entries.
    pub fn mean_squared_terms(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::MeanSquare(a), rg)
    }

    /// Paired row cosine similarity: `[n, e] x [n, e] -> [n, 1]`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "cosine_similarity",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let na = self.l2_normalize(a)?;
        let nb = self.l2_normalize(b)?;
        let prod = self.mul(na, nb)?;
        self.sum_cols(prod)
    }

    /// All-pairs cosine similarity: `[n, e] x [t, e] -> [n, t]`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let ca = self.value(a).cols();
        let cb = self.value(b).cols();
        if ca != cb {
            return Err(Error::shape(
                "cosine_matrix",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let na = self.l2_normalize(a)?;
        let nb = self.l2_normalize(b)?;
        let nbt = self.transpose(nb)?;
        self.matmul(na, nbt)
    }

    /// `x @ w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears gradients so `backward` may run again on this tape.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Populates gradients of `loss` for every node that requires them.
    /// Differentiable leaves the loss does not reach get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.numel()]);
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = ta.dims2().unwrap();
                let (_, n) = tb.dims2().unwrap();
                if self.rg(*a) {
                    let bt = transpose_raw(tb.data(), k, n);
                    self.accumulate(grads, *a, matmul_raw(g, &bt, m, n, k));
                }
                if self.rg(*b) {
                    let at = transpose_raw(ta.data(), m, k);
                    self.accumulate(grads, *b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let mode = bcast(ta, tb, "add").unwrap();
                self.accumulate(grads, *a, g.to_vec());
                if self.rg(*b) {
                    let mut gb = reduce_to(mode, g, tb.numel(), ta.cols().max(1));
                    if matches!(node.op, Op::Sub(..)) {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let mode = bcast(ta, tb, "mul").unwrap();
                let cols = ta.cols().max(1);
                if self.rg(*a) {
                    let ga = g
                        .iter()
                        .enumerate()
                        .map(|(j, gv)| gv * tb.data()[b_index(mode, j, cols)])
                        .collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let full: Vec<f64> = g.iter().zip(ta.data()).map(|(gv, av)| gv * av).collect();
                    self.accumulate(grads, *b, reduce_to(mode, &full, tb.numel(), cols));
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.iter().map(|v| v * c).collect());
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let r = out.rows();
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * cb);
                for row in g.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::BroadcastRows(a) => {
                let c = out.cols();
                let mut ga = vec![0.0; c];
                for row in g.chunks(c) {
                    ga.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SelectRows(a, idx) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut ga = vec![0.0; ta.numel()];
                for (k, &r) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[r * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims2().unwrap();
                self.accumulate(grads, *a, transpose_raw(g, r, c));
            }
            Op::Tanh(a) => {
                let ga = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let ga = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, x)| 2.0 * x * gv)
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::L2NormalizeRows(a) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut ga = vec![0.0; ta.numel()];
                for r in 0..out.rows() {
                    let x = ta.row(r);
                    let y = out.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yg: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[r * c + j] = (gr[j] - y[j] * yg) / norm;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a, tau) => {
                let c = out.cols();
                let mut ga = vec![0.0; out.numel()];
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[r * c + j] = y[j] * (gr[j] - dot) / tau;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::CrossEntropy(a, labels) => {
                let ta = self.value(*a);
                let (r, c) = ta.dims2().unwrap();
                let scale = g[0] / r as f64;
                let mut ga = vec![0.0; ta.numel()];
                for (i, &y) in labels.iter().enumerate() {
                    softmax_row(ta.row(i), 1.0, &mut ga[i * c..(i + 1) * c]);
                    ga[i * c + y] -= 1.0;
                    ga[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let ga = (0..ta.numel()).map(|j| g[j / c]).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::FrobeniusSq(a) => {
                let ga = self.value(*a).data().iter().map(|x| 2.0 * x * g[0]).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::MeanSquare(a) => {
                let ta = self.value(*a);
                let n = ta.numel() as f64;
                let ga = ta.data().iter().map(|x| 2.0 * x * g[0] / n).collect();
                self.accumulate(grads, *a, ga);
            }
        }
    }
}
