//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes. Learnable tensors are
//! borrowed into the tape with [`Tape::param`] rather than copied, so a large
//! embedding table costs nothing until rows are gathered from it.
//! [`Tape::backward`] walks the record in reverse and returns [`Gradients`]
//! keyed by the identity of each borrowed parameter.

use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvDims};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking the log in cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p> {
    Owned(Vec<f64>),
    Borrowed(&'p Tensor),
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum(Var),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    Relu(Var),
    MaxOverTime {
        y: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    StackChannels(Var, Var),
    Reshape(Var),
    Softmax(Var),
    CrossEntropy {
        p: Var,
        labels: Vec<usize>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations. Nodes are appended as they run,
/// so every node comes after the nodes that produced its inputs.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<usize, Var>,
    param_order: Vec<(usize, Var)>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn addr(t: &Tensor) -> usize {
    t as *const Tensor as usize
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrows a tensor as a leaf. Gradients are tracked iff the tensor has a
    /// gradient buffer; registering the same tensor twice returns the same var.
    pub fn param(&mut self, tensor: &'p Tensor) -> Var {
        let key = addr(tensor);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: Value::Borrowed(tensor),
            op: Op::Leaf,
            requires_grad: tensor.requires_grad(),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        if tensor.requires_grad() {
            self.param_order.push((key, v));
        }
        v
    }

    /// Records an owned constant (no gradient).
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Borrowed(t) => t.data(),
        }
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("recorded shapes are consistent")
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Matrix product. `a` may be a vector of length `k`, treated as `1×k`;
    /// the output then is a vector of length `n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, row_vector) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => {
                return Err(Error::shape(format!(
                    "matmul lhs must be rank 1 or 2, got {sa:?}"
                )))
            }
        };
        let (k2, n) = match sb.as_slice() {
            [k2, n] => (*k2, *n),
            _ => {
                return Err(Error::shape(format!(
                    "matmul rhs must be rank 2, got {sb:?}"
                )))
            }
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions disagree: {sa:?} · {sb:?}"
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let shape = if row_vector { vec![n] } else { vec![m, n] };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, Op::MatMul { a, b }, rg))
    }

    /// Adds a length-`n` bias to every trailing row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(bias) != [n] {
            return Err(Error::shape(format!(
                "bias {:?} does not match trailing dimension of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias { x, bias }, rg))
    }

    /// Elementwise product of equal-shape values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "mul shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// Valid convolution of `x` (`L×H×C`, or `L×H` for one channel) with
    /// filters `w` (`n×H×C×F`) and bias `b` (`F`), giving `(L−n+1)×F`.
    pub fn conv_valid(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (len, height, channels) = match sx.as_slice() {
            [l, h] => (*l, *h, 1),
            [l, h, c] => (*l, *h, *c),
            _ => {
                return Err(Error::shape(format!(
                    "conv input must be L×H or L×H×C, got {sx:?}"
                )))
            }
        };
        let [width, wh, wc, filters] = sw.as_slice() else {
            return Err(Error::shape(format!(
                "conv weight must be n×H×C×F, got {sw:?}"
            )));
        };
        if *wh != height || *wc != channels {
            return Err(Error::shape(format!(
                "conv weight {sw:?} does not match input {sx:?}"
            )));
        }
        if *width > len {
            return Err(Error::shape(format!(
                "filter width {width} exceeds sequence length {len}"
            )));
        }
        if self.shape(b) != [*filters] {
            return Err(Error::shape(format!(
                "conv bias {:?} does not match {filters} filters",
                self.shape(b)
            )));
        }
        let dims = ConvDims {
            len,
            height,
            channels,
            width: *width,
            filters: *filters,
        };
        let y = kernels::conv_forward(self.value(x), self.value(w), self.value(b), dims);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            vec![dims.positions(), dims.filters],
            y,
            Op::Conv { x, w, b, dims },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    /// Column-wise maximum over the time axis of a `T×F` value.
    pub fn max_over_time(&mut self, y: Var) -> Result<Var> {
        let (t, f) = match self.shape(y) {
            [t, f] => (*t, *f),
            s => {
                return Err(Error::shape(format!(
                    "max_over_time expects T×F, got {s:?}"
                )))
            }
        };
        if t == 0 {
            return Err(Error::shape("max_over_time over an empty time axis"));
        }
        let vals = self.value(y);
        let mut out = vals[..f].to_vec();
        let mut argmax = vec![0; f];
        for p in 1..t {
            for j in 0..f {
                let v = vals[p * f + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = p;
                }
            }
        }
        let rg = self.rg(y);
        Ok(self.push(vec![f], out, Op::MaxOverTime { y, argmax }, rg))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::shape(format!(
                    "concat expects vectors, got {:?}",
                    self.shape(p)
                )));
            }
            out.extend_from_slice(self.value(p));
        }
        if out.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::shape("stack_rows of nothing"));
        };
        let k = self.shape(first).to_vec();
        if k.len() != 1 || rows.iter().any(|&r| self.shape(r) != k.as_slice()) {
            return Err(Error::shape("stack_rows expects equal-length vectors"));
        }
        let mut out = Vec::with_capacity(rows.len() * k[0]);
        for &r in rows {
            out.extend_from_slice(self.value(r));
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(
            vec![rows.len(), k[0]],
            out,
            Op::StackRows(rows.to_vec()),
            rg,
        ))
    }

    /// Stacks two `L×H` matrices as the two channels of an `L×H×2` value.
    pub fn stack_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || self.shape(b) != s.as_slice() {
            return Err(Error::shape(format!(
                "stack_channels expects two equal L×H matrices, got {s:?} and {:?}",
                self.shape(b)
            )));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .flat_map(|(&x, &y)| [x, y])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![s[0], s[1], 2], out, Op::StackChannels(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, z: Var) -> Var {
        let k = *self.shape(z).last().unwrap();
        let out = kernels::softmax_rows(self.value(z), k);
        let rg = self.rg(z);
        self.push(self.shape(z).to_vec(), out, Op::Softmax(z), rg)
    }

    /// Mean negative log-likelihood of `labels` under the rows of `p`
    /// (`B×k`), with probabilities clamped to `[1e-12, 1]`.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = match self.shape(p) {
            [b, k] => (*b, *k),
            s => {
                return Err(Error::shape(format!(
                    "cross_entropy expects B×k, got {s:?}"
                )))
            }
        };
        if labels.len() != b {
            return Err(Error::shape(format!(
                "cross_entropy has {b} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::usage(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let vals = self.value(p);
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -vals[i * k + y].clamp(LOG_CLAMP, 1.0).ln())
            .sum();
        let rg = self.rg(p);
        Ok(self.push(
            vec![1],
            vec![total / b as f64],
            Op::CrossEntropy {
                p,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Gathers rows of a `V×H` table into an `ids.len()×H` matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, h) = match self.shape(table) {
            [v, h] => (*v, *h),
            s => {
                return Err(Error::shape(format!(
                    "gather_rows expects V×H table, got {s:?}"
                )))
            }
        };
        if ids.is_empty() {
            return Err(Error::shape("gather_rows with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(format!(
                "row id {bad} out of range for {v} rows"
            )));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            out.extend_from_slice(&t[i * h..(i + 1) * h]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), h],
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        let mut sparse: HashMap<usize, BTreeMap<usize, Vec<f64>>> = HashMap::new();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(idx, &g, &mut grads, &mut sparse);
        }

        let mut out = Gradients::default();
        for &(key, var) in &self.param_order {
            if var.0 >= n {
                continue;
            }
            let dense = grads[var.0].take();
            let rows = sparse.remove(&var.0);
            if dense.is_none() && rows.is_none() {
                continue;
            }
            let width = *self.shape(var).last().unwrap();
            out.entries.push((
                key,
                GradBuf {
                    len: self.value(var).len(),
                    width,
                    dense,
                    rows: rows.unwrap_or_default(),
                },
            ));
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        sparse: &mut HashMap<usize, BTreeMap<usize, Vec<f64>>>,
    ) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = match self.shape(*a) {
                    [k] => (1, *k),
                    [m, k] => (*m, *k),
                    _ => unreachable!(),
                };
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let da = slot(grads, *a, m * k);
                    kernels::matmul_grad_a(g, self.value(*b), da, m, k, n);
                }
                if self.rg(*b) {
                    let db = slot(grads, *b, k * n);
                    kernels::matmul_grad_b(self.value(*a), g, db, m, k, n);
                }
            }
            Op::AddBias { x, bias } => {
                let n = self.shape(*bias)[0];
                if self.rg(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.rg(*bias) {
                    let db = slot(grads, *bias, n);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Mul { a, b } => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.rg(this) {
                        let ov = self.value(other);
                        let d = slot(grads, this, g.len());
                        for ((d, gv), o) in d.iter_mut().zip(g).zip(ov) {
                            *d += gv * o;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                slot(grads, *x, len).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Conv { x, w, b, dims } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                // Split borrows: the three inputs are distinct nodes.
                let mut dx = self.rg(*x).then(|| take_slot(grads, *x, xv.len()));
                let mut dw = self.rg(*w).then(|| take_slot(grads, *w, wv.len()));
                let mut db = self.rg(*b).then(|| take_slot(grads, *b, dims.filters));
                kernels::conv_backward(
                    xv,
                    wv,
                    g,
                    *dims,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, buf) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(buf) = buf {
                        grads[v.0] = Some(buf);
                    }
                }
            }
            Op::Relu(x) => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let d = slot(grads, *x, g.len());
                    for ((d, gv), &v) in d.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MaxOverTime { y, argmax } => {
                let len = self.value(*y).len();
                let f = argmax.len();
                let d = slot(grads, *y, len);
                for (j, (&p, gv)) in argmax.iter().zip(g).enumerate() {
                    d[p * f + j] += gv;
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.rg(p) {
                        add_into(slot(grads, p, len), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::StackRows(rows) => {
                let k = self.shape(rows[0])[0];
                for (i, &r) in rows.iter().enumerate() {
                    if self.rg(r) {
                        add_into(slot(grads, r, k), &g[i * k..(i + 1) * k]);
                    }
                }
            }
            Op::StackChannels(a, b) => {
                let len = self.value(*a).len();
                for (c, v) in [(0, *a), (1, *b)] {
                    if self.rg(v) {
                        let d = slot(grads, v, len);
                        for (i, dv) in d.iter_mut().enumerate() {
                            *dv += g[2 * i + c];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                add_into(slot(grads, *x, g.len()), g);
            }
            Op::Softmax(z) => {
                let k = *node.shape.last().unwrap();
                let p = self.value(Var(idx));
                let d = slot(grads, *z, g.len());
                for ((d_row, p_row), g_row) in d.chunks_mut(k).zip(p.chunks(k)).zip(g.chunks(k)) {
                    let dot: f64 = p_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                    for ((dv, &pv), &gv) in d_row.iter_mut().zip(p_row).zip(g_row) {
                        *dv += pv * (gv - dot);
                    }
                }
            }
            Op::CrossEntropy { p, labels } => {
                let k = self.shape(*p)[1];
                let scale = g[0] / labels.len() as f64;
                let pv = self.value(*p);
                let len = pv.len();
                let d = slot(grads, *p, len);
                for (i, &y) in labels.iter().enumerate() {
                    let q = pv[i * k + y];
                    if q > LOG_CLAMP && q <= 1.0 {
                        d[i * k + y] -= scale / q;
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let h = self.shape(*table)[1];
                let is_leaf = matches!(self.nodes[table.0].op, Op::Leaf);
                if is_leaf {
                    let rows = sparse.entry(table.0).or_default();
                    for (r, &id) in ids.iter().enumerate() {
                        let acc = rows.entry(id).or_insert_with(|| vec![0.0; h]);
                        add_into(acc, &g[r * h..(r + 1) * h]);
                    }
                } else {
                    let len = self.value(*table).len();
                    let d = slot(grads, *table, len);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * h..(id + 1) * h], &g[r * h..(r + 1) * h]);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn take_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> Vec<f64> {
    grads[v.0].take().unwrap_or_else(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradient of one parameter: a dense part plus sparse row contributions
/// from gathers (embedding lookups).
#[derive(Debug, Clone)]
pub struct GradBuf {
    len: usize,
    width: usize,
    dense: Option<Vec<f64>>,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl GradBuf {
    pub fn add_to(&self, dst: &mut [f64]) {
        assert_eq!(dst.len(), self.len, "gradient buffer size mismatch");
        if let Some(d) = &self.dense {
            add_into(dst, d);
        }
        for (&r, row) in &self.rows {
            add_into(&mut dst[r * self.width..(r + 1) * self.width], row);
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.add_to(&mut out);
        out
    }
}

/// Gradients of a loss with respect to the borrowed parameters of a tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: Vec<(usize, GradBuf)>,
}

impl Gradients {
    pub fn get(&self, param: &Tensor) -> Option<&GradBuf> {
        let key = addr(param);
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, g)| g)
    }

    /// Dense gradient for `param`; zeros when the loss does not reach it.
    pub fn dense(&self, param: &Tensor) -> Vec<f64> {
        self.get(param)
            .map(GradBuf::to_dense)
            .unwrap_or_else(|| vec![0.0; param.len()])
    }

    /// Adds these gradients into the `grad` buffers of `params`.
    pub fn accumulate(&self, params: &mut [&mut Tensor]) {
        for p in params.iter_mut() {
            let key = addr(p);
            if let Some((_, g)) = self.entries.iter().find(|(k, _)| *k == key) {
                if let Some(dst) = p.grad_mut() {
                    g.add_to(dst);
                }
            }
        }
    }
}
