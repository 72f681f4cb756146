//! Reverse-mode automatic differentiation on a tape.
//!
//! A [`Graph`] is an append-only arena of nodes. Every builder method runs its
//! forward computation eagerly, stores the result, and records which inputs
//! produced it. [`Graph::backward`] walks the tape once in reverse, applying
//! each operation's vector-Jacobian product and accumulating gradients, so a
//! node consumed several times receives the sum of all its downstream
//! contributions. Recording order is a topological order by construction
//! (inputs always have smaller ids than outputs), which makes the reverse walk
//! correct without an explicit sort.
//!
//! One graph serves one forward/backward pass; training builds a fresh graph
//! per step and throws it away afterwards. Everything is single-threaded and
//! deterministic: the same inputs replay to bit-identical values.

use crate::error::{LutError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input with no producers; `needs_grad` on the node decides whether
    /// gradients flow into it.
    Leaf,
    Add(NodeId, NodeId),
    /// Row-broadcast add: [r, c] + [c].
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    Embed { table: NodeId, ids: Arc<Vec<usize>> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows { a: NodeId, start: usize },
    SliceCols { a: NodeId, start: usize, len: usize },
    Reshape(NodeId),
    /// 1-d gather over the flattened input; negative indices read the fill
    /// value at forward time and receive no gradient.
    Gather { a: NodeId, idx: Arc<Vec<i64>> },
    LogAddExp(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Column means: [r, c] -> [c].
    MeanAxis0(NodeId),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn shape(&self, n: NodeId) -> &[usize] {
        &self.nodes[n.0].shape
    }

    pub fn data(&self, n: NodeId) -> &[f64] {
        &self.nodes[n.0].data
    }

    pub fn to_tensor(&self, n: NodeId) -> Tensor {
        Tensor::new(self.nodes[n.0].shape.clone(), self.nodes[n.0].data.clone())
            .expect("node shapes are always consistent")
    }

    /// Scalar value of a 1-element node.
    pub fn scalar_value(&self, n: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[n.0].data.len(), 1);
        self.nodes[n.0].data[0]
    }

    /// Gradient of the last `backward` target with respect to node `n`, if any
    /// was accumulated.
    pub fn grad(&self, n: NodeId) -> Option<&[f64]> {
        self.grads.get(n.0).and_then(|g| g.as_deref())
    }

    fn dims2(&self, n: NodeId, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[n.0].shape[..] {
            [r, c] => Ok((r, c)),
            ref s => Err(LutError::shape(op, format!("expected 2-d tensor, got {s:?}"))),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, n: NodeId) -> bool {
        self.nodes[n.0].needs_grad
    }

    // ---- leaves -----------------------------------------------------------

    /// Differentiable input (parameters, or any tensor whose gradient a test
    /// wants to inspect).
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Non-differentiable input (data, masks, frozen teacher outputs).
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(shape, data, Op::Leaf, false)
    }

    // ---- elementwise ------------------------------------------------------

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(LutError::shape(
                op,
                format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Add(a, b), self.ng(a) || self.ng(b)))
    }

    /// `[r, c] + [c]`, adding the vector to every row.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "add_row")?;
        if self.nodes[b.0].shape != [c] {
            return Err(LutError::shape(
                "add_row",
                format!("matrix [{r}, {c}] vs vector {:?}", self.nodes[b.0].shape),
            ));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.nodes[a.0].data[i * c + j] + self.nodes[b.0].data[j]);
            }
        }
        Ok(self.push(vec![r, c], data, Op::AddRow(a, b), self.ng(a) || self.ng(b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Sub(a, b), self.ng(a) || self.ng(b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Mul(a, b), self.ng(a) || self.ng(b)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let data = self.nodes[a.0].data.iter().map(|x| x * k).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Scale(a, k), self.ng(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Relu(a), self.ng(a))
    }

    /// Elementwise log(exp(a) + exp(b)), computed stably. `-inf` entries act
    /// as "log of zero" and contribute nothing.
    pub fn logaddexp(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("logaddexp", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| log_add_exp(x, y))
            .collect();
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::LogAddExp(a, b),
            self.ng(a) || self.ng(b),
        ))
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(LutError::shape(
                "matmul",
                format!("inner dims differ: [{m}, {ka}] x [{kb}, {n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, ka, n, &mut out);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), self.ng(a) || self.ng(b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "transpose")?;
        let src = &self.nodes[a.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose(a), self.ng(a)))
    }

    // ---- row-wise nonlinearities ------------------------------------------

    fn check_softmax_input(&self, op: &'static str, a: NodeId) -> Result<()> {
        for &v in &self.nodes[a.0].data {
            if v.is_nan() || v == f64::INFINITY {
                return Err(LutError::NonFinite(op.to_string()));
            }
        }
        Ok(())
    }

    /// Row-wise softmax of a 2-d tensor. `-inf` marks entries that must get
    /// zero probability (attention masks); a row of only `-inf` is an error.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_softmax_input("softmax", a)?;
        let (r, c) = self.dims2(a, "softmax")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].data[i * c..(i + 1) * c];
            softmax_row(row, &mut out[i * c..(i + 1) * c])
                .map_err(|_| LutError::NonFinite("softmax: row with no finite entry".into()))?;
        }
        Ok(self.push(vec![r, c], out, Op::SoftmaxRows(a), self.ng(a)))
    }

    /// Softmax along a chosen axis of a 1-d or 2-d tensor. Axis 1 of a matrix
    /// normalizes rows, axis 0 normalizes columns (via transposition).
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        match (self.nodes[a.0].shape.len(), axis) {
            (1, 0) => {
                let n = self.nodes[a.0].data.len();
                let m = self.reshape(a, vec![1, n])?;
                let s = self.softmax_rows(m)?;
                self.reshape(s, vec![n])
            }
            (2, 1) => self.softmax_rows(a),
            (2, 0) => {
                let t = self.transpose(a)?;
                let s = self.softmax_rows(t)?;
                self.transpose(s)
            }
            (ndim, _) => Err(LutError::shape(
                "softmax",
                format!("axis {axis} invalid for {ndim}-d tensor"),
            )),
        }
    }

    /// Row-wise log-softmax; same domain rules as [`Self::softmax_rows`].
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_softmax_input("log_softmax", a)?;
        let (r, c) = self.dims2(a, "log_softmax")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return Err(LutError::NonFinite("log_softmax: row with no finite entry".into()));
            }
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        Ok(self.push(vec![r, c], out, Op::LogSoftmaxRows(a), self.ng(a)))
    }

    /// Row-wise layer normalization with learned gain and bias:
    /// `y = gain * (x - mean) / sqrt(var + eps) + bias`, variance taken over
    /// each row (population convention).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "layer_norm")?;
        if self.nodes[gain.0].shape != [c] || self.nodes[bias.0].shape != [c] {
            return Err(LutError::shape(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} must both be [{c}]",
                    self.nodes[gain.0].shape, self.nodes[bias.0].shape
                ),
            ));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let (mu, s) = row_moments(row, eps);
            for j in 0..c {
                out[i * c + j] = self.nodes[gain.0].data[j] * (row[j] - mu) / s
                    + self.nodes[bias.0].data[j];
            }
        }
        let needs = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(vec![r, c], out, Op::LayerNorm { x, gain, bias, eps }, needs))
    }

    // ---- lookup / structure -----------------------------------------------

    /// Row lookup: `table` is `[v, d]`, output is `[ids.len(), d]`.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2(table, "embed")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(LutError::shape("embed", format!("id {bad} out of range (table has {v} rows)")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&self.nodes[table.0].data[i * d..(i + 1) * d]);
        }
        let needs = self.ng(table);
        Ok(self.push(vec![ids.len(), d], data, Op::Embed { table, ids: Arc::new(ids.to_vec()) }, needs))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(LutError::EmptyInput("concat_rows of zero tensors"));
        }
        let (_, c0) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != c0 {
                return Err(LutError::shape("concat_rows", format!("widths differ: {c0} vs {c}")));
            }
            rows += r;
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let needs = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![rows, c0], data, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(LutError::EmptyInput("concat_cols of zero tensors"));
        }
        let (r0, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != r0 {
                return Err(LutError::shape("concat_cols", format!("row counts differ: {r0} vs {r}")));
            }
            widths.push(c);
            total += c;
        }
        let mut data = Vec::with_capacity(r0 * total);
        for i in 0..r0 {
            for (site, &p) in parts.iter().enumerate() {
                let c = widths[site];
                data.extend_from_slice(&self.nodes[p.0].data[i * c..(i + 1) * c]);
            }
        }
        let needs = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![r0, total], data, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "slice_rows")?;
        if start + len > r {
            return Err(LutError::shape(
                "slice_rows",
                format!("rows {start}..{} out of range for [{r}, {c}]", start + len),
            ));
        }
        let data = self.nodes[a.0].data[start * c..(start + len) * c].to_vec();
        Ok(self.push(vec![len, c], data, Op::SliceRows { a, start }, self.ng(a)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if start + len > c {
            return Err(LutError::shape(
                "slice_cols",
                format!("cols {start}..{} out of range for [{r}, {c}]", start + len),
            ));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.nodes[a.0].data[i * c + start..i * c + start + len]);
        }
        Ok(self.push(vec![r, len], data, Op::SliceCols { a, start, len }, self.ng(a)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].data.len() {
            return Err(LutError::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.nodes[a.0].shape, shape),
            ));
        }
        let data = self.nodes[a.0].data.clone();
        Ok(self.push(shape, data, Op::Reshape(a), self.ng(a)))
    }

    /// Gather from the flattened input: `out[j] = a.flat[idx[j]]`, or `fill`
    /// where `idx[j] < 0` (those positions get no gradient).
    pub fn gather(&mut self, a: NodeId, idx: Vec<i64>, fill: f64) -> Result<NodeId> {
        let n = self.nodes[a.0].data.len() as i64;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(LutError::shape("gather", format!("index {bad} out of range (len {n})")));
        }
        let data = idx
            .iter()
            .map(|&i| if i < 0 { fill } else { self.nodes[a.0].data[i as usize] })
            .collect();
        let needs = self.ng(a);
        Ok(self.push(vec![idx.len()], data, Op::Gather { a, idx: Arc::new(idx) }, needs))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![], vec![s], Op::SumAll(a), self.ng(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a.0].data.len();
        if n == 0 {
            return Err(LutError::EmptyInput("mean of empty tensor"));
        }
        let s: f64 = self.nodes[a.0].data.iter().sum();
        Ok(self.push(vec![], vec![s / n as f64], Op::MeanAll(a), self.ng(a)))
    }

    /// Column means of a 2-d tensor: `[r, c] -> [c]`.
    pub fn mean_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "mean_axis0")?;
        if r == 0 {
            return Err(LutError::EmptyInput("mean over zero rows"));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += self.nodes[a.0].data[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        Ok(self.push(vec![c], out, Op::MeanAxis0(a), self.ng(a)))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar node. Each tape entry is visited exactly
    /// once; afterwards [`Graph::grad`] returns d(loss)/d(node) for every node
    /// the loss depends on (and that was built with gradient tracking).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(LutError::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else { continue };
            self.apply_vjp(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn accum(&mut self, n: NodeId, f: impl FnOnce(&Graph, &mut [f64])) {
        if !self.nodes[n.0].needs_grad {
            return;
        }
        let mut g = self.grads[n.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[n.0].data.len()]);
        f(self, &mut g);
        self.grads[n.0] = Some(g);
    }

    fn apply_vjp(&mut self, i: usize, gout: &[f64]) {
        // Clone is cheap: ops hold ids, shared index vectors are Arc'd.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(a, |_, g| add_into(g, gout));
                self.accum(b, |_, g| add_into(g, gout));
            }
            Op::AddRow(a, b) => {
                self.accum(a, |_, g| add_into(g, gout));
                let c = self.nodes[b.0].data.len();
                self.accum(b, |_, g| {
                    for (k, &v) in gout.iter().enumerate() {
                        g[k % c] += v;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accum(a, |_, g| add_into(g, gout));
                self.accum(b, |_, g| {
                    for (gi, &v) in g.iter_mut().zip(gout) {
                        *gi -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                self.accum(a, |gr, g| {
                    for (k, gi) in g.iter_mut().enumerate() {
                        *gi += gout[k] * gr.nodes[b.0].data[k];
                    }
                });
                self.accum(b, |gr, g| {
                    for (k, gi) in g.iter_mut().enumerate() {
                        *gi += gout[k] * gr.nodes[a.0].data[k];
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accum(a, |_, g| {
                    for (gi, &v) in g.iter_mut().zip(gout) {
                        *gi += k * v;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                // dA = dOut . B^T
                self.accum(a, |gr, g| {
                    let bd = &gr.nodes[b.0].data;
                    for i2 in 0..m {
                        for kk in 0..k {
                            let mut s = 0.0;
                            let go = &gout[i2 * n..(i2 + 1) * n];
                            let br = &bd[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                s += go[j] * br[j];
                            }
                            g[i2 * k + kk] += s;
                        }
                    }
                });
                // dB = A^T . dOut
                self.accum(b, |gr, g| {
                    let ad = &gr.nodes[a.0].data;
                    for i2 in 0..m {
                        let go = &gout[i2 * n..(i2 + 1) * n];
                        for kk in 0..k {
                            let av = ad[i2 * k + kk];
                            if av != 0.0 {
                                let gb = &mut g[kk * n..(kk + 1) * n];
                                for j in 0..n {
                                    gb[j] += av * go[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                self.accum(a, |_, g| {
                    for i2 in 0..r {
                        for j in 0..c {
                            g[i2 * c + j] += gout[j * r + i2];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                self.accum(a, |gr, g| {
                    for (k, gi) in g.iter_mut().enumerate() {
                        if gr.nodes[a.0].data[k] > 0.0 {
                            *gi += gout[k];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let c = self.nodes[i].shape[1];
                let y = self.nodes[i].data.clone();
                self.accum(a, |_, g| {
                    for (row_i, row_y) in y.chunks_exact(c).enumerate() {
                        let go = &gout[row_i * c..(row_i + 1) * c];
                        let dot: f64 = row_y.iter().zip(go).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..c {
                            g[row_i * c + j] += row_y[j] * (go[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let c = self.nodes[i].shape[1];
                let y = self.nodes[i].data.clone();
                self.accum(a, |_, g| {
                    for (row_i, row_y) in y.chunks_exact(c).enumerate() {
                        let go = &gout[row_i * c..(row_i + 1) * c];
                        let gsum: f64 = go.iter().sum();
                        for j in 0..c {
                            g[row_i * c + j] += go[j] - row_y[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let xd = self.nodes[x.0].data.clone();
                let gd = self.nodes[gain.0].data.clone();
                self.accum(x, |_, g| {
                    for i2 in 0..r {
                        let row = &xd[i2 * c..(i2 + 1) * c];
                        let (mu, s) = row_moments(row, eps);
                        let go = &gout[i2 * c..(i2 + 1) * c];
                        // dyhat = gout * gain; dx = (dyhat - mean(dyhat) - xhat*mean(dyhat*xhat)) / s
                        let mut mean_dy = 0.0;
                        let mut mean_dyx = 0.0;
                        for j in 0..c {
                            let dyh = go[j] * gd[j];
                            let xh = (row[j] - mu) / s;
                            mean_dy += dyh;
                            mean_dyx += dyh * xh;
                        }
                        mean_dy /= c as f64;
                        mean_dyx /= c as f64;
                        for j in 0..c {
                            let dyh = go[j] * gd[j];
                            let xh = (row[j] - mu) / s;
                            g[i2 * c + j] += (dyh - mean_dy - xh * mean_dyx) / s;
                        }
                    }
                });
                self.accum(gain, |_, g| {
                    for i2 in 0..r {
                        let row = &xd[i2 * c..(i2 + 1) * c];
                        let (mu, s) = row_moments(row, eps);
                        for j in 0..c {
                            g[j] += gout[i2 * c + j] * (row[j] - mu) / s;
                        }
                    }
                });
                self.accum(bias, |_, g| {
                    for i2 in 0..r {
                        for j in 0..c {
                            g[j] += gout[i2 * c + j];
                        }
                    }
                });
            }
            Op::Embed { table, ids } => {
                let d = self.nodes[i].shape[1];
                self.accum(table, |_, g| {
                    for (row_i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            g[id * d + j] += gout[row_i * d + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].data.len();
                    self.accum(p, |_, g| add_into(g, &gout[off..off + n]));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let r = self.nodes[i].shape[0];
                let total = self.nodes[i].shape[1];
                let mut off = 0;
                for p in parts {
                    let c = self.nodes[p.0].shape[1];
                    self.accum(p, |_, g| {
                        for i2 in 0..r {
                            for j in 0..c {
                                g[i2 * c + j] += gout[i2 * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::SliceRows { a, start } => {
                let c = self.nodes[i].shape[1];
                let n = self.nodes[i].data.len();
                self.accum(a, |_, g| add_into(&mut g[start * c..start * c + n], gout));
            }
            Op::SliceCols { a, start, len } => {
                let r = self.nodes[i].shape[0];
                let c_full = self.nodes[a.0].shape[1];
                self.accum(a, |_, g| {
                    for i2 in 0..r {
                        for j in 0..len {
                            g[i2 * c_full + start + j] += gout[i2 * len + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                self.accum(a, |_, g| add_into(g, gout));
            }
            Op::Gather { a, idx } => {
                self.accum(a, |_, g| {
                    for (j, &src) in idx.iter().enumerate() {
                        if src >= 0 {
                            g[src as usize] += gout[j];
                        }
                    }
                });
            }
            Op::LogAddExp(a, b) => {
                let out = self.nodes[i].data.clone();
                self.accum(a, |gr, g| {
                    for (k, gi) in g.iter_mut().enumerate() {
                        let av = gr.nodes[a.0].data[k];
                        if out[k] != f64::NEG_INFINITY && av != f64::NEG_INFINITY {
                            *gi += gout[k] * (av - out[k]).exp();
                        }
                    }
                });
                self.accum(b, |gr, g| {
                    for (k, gi) in g.iter_mut().enumerate() {
                        let bv = gr.nodes[b.0].data[k];
                        if out[k] != f64::NEG_INFINITY && bv != f64::NEG_INFINITY {
                            *gi += gout[k] * (bv - out[k]).exp();
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let v = gout[0];
                self.accum(a, |_, g| {
                    for gi in g.iter_mut() {
                        *gi += v;
                    }
                });
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].data.len() as f64;
                let v = gout[0] / n;
                self.accum(a, |_, g| {
                    for gi in g.iter_mut() {
                        *gi += v;
                    }
                });
            }
            Op::MeanAxis0(a) => {
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                self.accum(a, |_, g| {
                    for i2 in 0..r {
                        for j in 0..c {
                            g[i2 * c + j] += gout[j] / r as f64;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c;
    (mu, (var + eps).sqrt())
}

fn softmax_row(row: &[f64], out: &mut [f64]) -> std::result::Result<(), ()> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(());
    }
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Stable `log(exp(a) + exp(b))` with `-inf` as the additive identity.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

// ---- parameter binding -----------------------------------------------------

/// How model code obtains graph nodes for stored parameters. The normal
/// implementation copies current values in as differentiable leaves; the
/// finite-difference checker instead carves every parameter out of one flat
/// input node so a whole model can be differentiated with respect to a single
/// vector.
pub trait ParamBind {
    fn bind(&mut self, g: &mut Graph, store: &ParamStore, pid: ParamId) -> Result<NodeId>;
}

/// Binds parameters by value. Remembers which node each parameter became so
/// gradients can be collected after `backward`.
#[derive(Debug, Default)]
pub struct ValueBind {
    map: HashMap<ParamId, NodeId>,
}

impl ValueBind {
    pub fn new() -> Self {
        Self::default()
    }

    /// Per-parameter gradients in store order; `None` for parameters the loss
    /// never touched.
    pub fn grads(&self, g: &Graph, store: &ParamStore) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; store.len()];
        for (&pid, &node) in &self.map {
            out[pid.0] = g.grad(node).map(|s| s.to_vec());
        }
        out
    }

    pub fn bound(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.map.iter().map(|(&p, &n)| (p, n))
    }
}

impl ParamBind for ValueBind {
    fn bind(&mut self, g: &mut Graph, store: &ParamStore, pid: ParamId) -> Result<NodeId> {
        if let Some(&n) = self.map.get(&pid) {
            return Ok(n);
        }
        let n = g.leaf(store.get(pid));
        self.map.insert(pid, n);
        Ok(n)
    }
}

/// Binds parameters as slices of one flat leaf node (see [`ParamBind`]).
#[derive(Debug)]
pub struct FlatBind {
    flat: NodeId,
    layout: Vec<(usize, usize)>,
    map: HashMap<ParamId, NodeId>,
}

impl FlatBind {
    /// `flat` must contain the values of [`ParamStore::flatten`] for the same store.
    pub fn new(flat: NodeId, store: &ParamStore) -> Self {
        FlatBind { flat, layout: store.layout(), map: HashMap::new() }
    }
}

impl ParamBind for FlatBind {
    fn bind(&mut self, g: &mut Graph, store: &ParamStore, pid: ParamId) -> Result<NodeId> {
        if let Some(&n) = self.map.get(&pid) {
            return Ok(n);
        }
        let (off, len) = self.layout[pid.0];
        let idx: Vec<i64> = (off..off + len).map(|i| i as i64).collect();
        let sliced = g.gather(self.flat, idx, 0.0)?;
        let n = g.reshape(sliced, store.get(pid).shape().to_vec())?;
        self.map.insert(pid, n);
        Ok(n)
    }
}
