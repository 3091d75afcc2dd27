//! Dense f64 tensors with tape-based reverse-mode differentiation, plus the
//! Adam optimizer.
//!
//! A [`Tape`] records one forward pass as a topologically ordered list of
//! primitive operations; [`Tape::backward`] replays it once in reverse,
//! accumulating gradients across fan-out. Everything is 64-bit and
//! single-threaded per tape, so a fixed seed reproduces losses bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::NormAdjacency;

/// Dense row-major tensor of up to 3 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 3, "1 to 3 dims supported");
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor::new(vec![v.len()], v)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows of a 2-D tensor (or 1 for 1-D).
    fn rows2(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing dimension.
    fn last_dim(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Treats a 1-D `(m)` or 2-D `(1, m)` tensor as a broadcastable row.
    fn as_row(&self) -> Option<&[f64]> {
        match self.shape.as_slice() {
            [_] => Some(&self.data),
            [1, _] => Some(&self.data),
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    /// `A B^T`
    MatMulBt { a: NodeId, b: NodeId },
    SpMm { adj: Arc<NormAdjacency>, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddRowBroadcast { x: NodeId, v: NodeId },
    MulRowBroadcast { x: NodeId, v: NodeId },
    ScaleByScalar { x: NodeId, s: NodeId },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Softmax { x: NodeId },
    BatchNorm { x: NodeId, gamma: NodeId, kappa: NodeId, mu: Vec<f64>, inv_std: Vec<f64> },
    ConcatCols { a: NodeId, b: NodeId },
    SliceCols { x: NodeId, from: usize },
    SliceTensor3 { w: NodeId, index: usize },
    Reshape { x: NodeId },
    GatherRows { x: NodeId, idx: Vec<usize> },
    RowMean { x: NodeId },
    ReduceSum { x: NodeId },
    ReduceMean { x: NodeId },
    IndexScalar { x: NodeId, i: usize },
    Bilinear { u: NodeId, v: NodeId, w: NodeId },
    BceWithLogitsMean { z: NodeId, labels: Vec<f64> },
    SoftmaxCeMean { z: NodeId, targets: Vec<usize> },
}

struct TapeNode {
    value: Tensor,
    op: Op,
}

/// Recorded forward pass. Append-only; node ids are topologically ordered.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    grads: Vec<Option<Tensor>>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` call; zeros for nodes off the loss path.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(self.nodes[id.0].value.shape().to_vec()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite tensor produced on tape");
        self.nodes.push(TapeNode { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([n, k], [k2, m]) = (shape2(ta, "matmul")?, shape2(tb, "matmul")?);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} times {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        mm(ta.data(), tb.data(), n, k, m, &mut out);
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMul { a, b }))
    }

    /// `A B^T`, with `A: n x k` and `B: m x k`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([n, k], [m, k2]) = (shape2(ta, "matmul_bt")?, shape2(tb, "matmul_bt")?);
        if k != k2 {
            return Err(Error::shape("matmul_bt", format!("{n}x{k} times ({m}x{k2})^T")));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ra = &ta.data()[i * k..(i + 1) * k];
            for j in 0..m {
                let rb = &tb.data()[j * k..(j + 1) * k];
                out[i * m + j] = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMulBt { a, b }))
    }

    /// Sparse-dense product with a normalized adjacency.
    pub fn spmm(&mut self, adj: &Arc<NormAdjacency>, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let [n, d] = shape2(tx, "spmm")?;
        if n != adj.n() {
            return Err(Error::shape("spmm", format!("adjacency is {0}x{0}, input is {n}x{d}", adj.n())));
        }
        let mut out = vec![0.0; n * d];
        adj.mul_dense(tx.data(), d, &mut out);
        Ok(self.push(Tensor::matrix(n, d, out), Op::SpMm { adj: Arc::clone(adj), x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data);
        Ok(self.push(t, op(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(t.shape().to_vec(), data);
        self.push(t, Op::Scale { x, c })
    }

    /// Adds a row vector `v` (`(m)` or `(1, m)`) to every row of `x: n x m`.
    pub fn add_row_broadcast(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (tx, tv) = (self.value(x), self.value(v));
        let [n, m] = shape2(tx, "add_row_broadcast")?;
        let row = tv
            .as_row()
            .filter(|r| r.len() == m)
            .ok_or_else(|| Error::shape("add_row_broadcast", format!("row {:?} vs cols {m}", tv.shape())))?;
        let mut out = tx.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] += row[j];
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out), Op::AddRowBroadcast { x, v }))
    }

    /// Multiplies every row of `x: n x m` elementwise by a row vector.
    pub fn mul_row_broadcast(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (tx, tv) = (self.value(x), self.value(v));
        let [n, m] = shape2(tx, "mul_row_broadcast")?;
        let row = tv
            .as_row()
            .filter(|r| r.len() == m)
            .ok_or_else(|| Error::shape("mul_row_broadcast", format!("row {:?} vs cols {m}", tv.shape())))?;
        let mut out = tx.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] *= row[j];
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out), Op::MulRowBroadcast { x, v }))
    }

    /// Multiplies a tensor by a scalar node.
    pub fn scale_by_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape("scale_by_scalar", "scale argument must be scalar"));
        }
        let sv = self.value(s).item();
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * sv).collect();
        let t = Tensor::new(t.shape().to_vec(), data);
        Ok(self.push(t, Op::ScaleByScalar { x, s }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(t.shape().to_vec(), data);
        self.push(t, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(t.shape().to_vec(), data);
        self.push(t, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| sigmoid(*v)).collect();
        let t = Tensor::new(t.shape().to_vec(), data);
        self.push(t, Op::Sigmoid { x })
    }

    /// Softmax over the last axis: per row for 2-D, over the whole vector
    /// for 1-D.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let cols = t.last_dim();
        let rows = t.numel() / cols;
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out);
        self.push(t, Op::Softmax { x })
    }

    /// Full-batch normalization over all rows, per column, with learnable
    /// scale `gamma` and shift `kappa`:
    /// `y = gamma * (x - mean) / sqrt(var + eps) + kappa`.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, kappa: NodeId, eps: f64) -> Result<NodeId> {
        let tx = self.value(x);
        let [n, m] = shape2(tx, "batch_norm")?;
        let g = self
            .value(gamma)
            .as_row()
            .filter(|r| r.len() == m)
            .ok_or_else(|| Error::shape("batch_norm", "gamma must match column count"))?
            .to_vec();
        let k = self
            .value(kappa)
            .as_row()
            .filter(|r| r.len() == m)
            .ok_or_else(|| Error::shape("batch_norm", "kappa must match column count"))?
            .to_vec();
        let data = tx.data();
        let mut mu = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                mu[j] += data[i * m + j];
            }
        }
        for v in &mut mu {
            *v /= n as f64;
        }
        let mut var = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let d = data[i * m + j] - mu[j];
                var[j] += d * d;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / n as f64 + eps).sqrt()).collect();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = g[j] * (data[i * m + j] - mu[j]) * inv_std[j] + k[j];
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out), Op::BatchNorm { x, gamma, kappa, mu, inv_std }))
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([n, p], [n2, q]) = (shape2(ta, "concat_cols")?, shape2(tb, "concat_cols")?);
        if n != n2 {
            return Err(Error::shape("concat_cols", format!("{n} rows vs {n2} rows")));
        }
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&ta.data()[i * p..(i + 1) * p]);
            out.extend_from_slice(&tb.data()[i * q..(i + 1) * q]);
        }
        Ok(self.push(Tensor::matrix(n, p + q, out), Op::ConcatCols { a, b }))
    }

    /// Column slice `x[:, from..from+width]`.
    pub fn slice_cols(&mut self, x: NodeId, from: usize, width: usize) -> Result<NodeId> {
        let tx = self.value(x);
        let [n, m] = shape2(tx, "slice_cols")?;
        if from + width > m {
            return Err(Error::shape("slice_cols", format!("{from}..{} out of {m} columns", from + width)));
        }
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            out.extend_from_slice(&tx.data()[i * m + from..i * m + from + width]);
        }
        Ok(self.push(Tensor::matrix(n, width, out), Op::SliceCols { x, from }))
    }

    /// Extracts slice `i` of a 3-D tensor `(s, p, q)` as a `p x q` matrix.
    pub fn slice_tensor3(&mut self, w: NodeId, index: usize) -> Result<NodeId> {
        let tw = self.value(w);
        let &[s, p, q] = tw.shape() else {
            return Err(Error::shape("slice_tensor3", format!("expected 3-D, got {:?}", tw.shape())));
        };
        if index >= s {
            return Err(Error::shape("slice_tensor3", format!("slice {index} out of {s}")));
        }
        let out = tw.data()[index * p * q..(index + 1) * p * q].to_vec();
        Ok(self.push(Tensor::matrix(p, q, out), Op::SliceTensor3 { w, index }))
    }

    /// Shape change over the same contiguous buffer.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let tx = self.value(x);
        if shape.iter().product::<usize>() != tx.numel() {
            return Err(Error::shape("reshape", format!("{:?} to {:?}", tx.shape(), shape)));
        }
        let t = Tensor::new(shape, tx.data().to_vec());
        Ok(self.push(t, Op::Reshape { x }))
    }

    /// Selects rows of `x` by index, with repetition allowed.
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let tx = self.value(x);
        let [n, m] = shape2(tx, "gather_rows")?;
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            if i >= n {
                return Err(Error::shape("gather_rows", format!("row {i} out of {n}")));
            }
            out.extend_from_slice(&tx.data()[i * m..(i + 1) * m]);
        }
        Ok(self.push(Tensor::matrix(idx.len(), m, out), Op::GatherRows { x, idx: idx.to_vec() }))
    }

    pub fn row_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let [n, m] = shape2(tx, "row_mean")?;
        let mut out = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                out[j] += tx.data()[i * m + j];
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        Ok(self.push(Tensor::matrix(1, m, out), Op::RowMean { x }))
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum { x })
    }

    pub fn reduce_mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::ReduceMean { x })
    }

    /// Extracts element `i` of a 1-D tensor as a scalar node.
    pub fn index_scalar(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.shape().len() != 1 || i >= tx.numel() {
            return Err(Error::shape("index_scalar", format!("index {i} of {:?}", tx.shape())));
        }
        let v = tx.data()[i];
        Ok(self.push(Tensor::scalar(v), Op::IndexScalar { x, i }))
    }

    /// Slice-wise bilinear form: with `u, v: B x d` and `w: (s, d, d)`,
    /// `out[b, i] = u_b^T W_i v_b`.
    pub fn bilinear(&mut self, u: NodeId, v: NodeId, w: NodeId) -> Result<NodeId> {
        let (tu, tv, tw) = (self.value(u), self.value(v), self.value(w));
        let ([bn, d], [bn2, d2]) = (shape2(tu, "bilinear")?, shape2(tv, "bilinear")?);
        let &[s, p, q] = tw.shape() else {
            return Err(Error::shape("bilinear", format!("weights must be 3-D, got {:?}", tw.shape())));
        };
        if bn != bn2 || d != d2 || p != d || q != d {
            return Err(Error::shape(
                "bilinear",
                format!("u {bn}x{d}, v {bn2}x{d2}, w {s}x{p}x{q}"),
            ));
        }
        let mut out = vec![0.0; bn * s];
        for b in 0..bn {
            let ub = &tu.data()[b * d..(b + 1) * d];
            let vb = &tv.data()[b * d..(b + 1) * d];
            for i in 0..s {
                let wi = &tw.data()[i * d * d..(i + 1) * d * d];
                let mut total = 0.0;
                for r in 0..d {
                    let row = &wi[r * d..(r + 1) * d];
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += row[c] * vb[c];
                    }
                    total += ub[r] * acc;
                }
                out[b * s + i] = total;
            }
        }
        Ok(self.push(Tensor::matrix(bn, s, out), Op::Bilinear { u, v, w }))
    }

    /// Mean binary cross-entropy with logits; labels are fixed data, not tape
    /// nodes. Computed in the stable form
    /// `max(z, 0) - z y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits_mean(&mut self, z: NodeId, labels: &[f64]) -> Result<NodeId> {
        let tz = self.value(z);
        if tz.numel() != labels.len() {
            return Err(Error::shape(
                "bce_with_logits_mean",
                format!("{} logits vs {} labels", tz.numel(), labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(Error::shape("bce_with_logits_mean", "empty batch"));
        }
        let mut acc = 0.0;
        for (&zi, &yi) in tz.data().iter().zip(labels) {
            acc += zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p();
        }
        let loss = acc / labels.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogitsMean { z, labels: labels.to_vec() }))
    }

    /// Mean softmax cross-entropy against integer class targets.
    pub fn softmax_ce_mean(&mut self, z: NodeId, targets: &[usize]) -> Result<NodeId> {
        let tz = self.value(z);
        let [n, c] = shape2(tz, "softmax_ce_mean")?;
        if targets.len() != n {
            return Err(Error::shape(
                "softmax_ce_mean",
                format!("{n} logit rows vs {} targets", targets.len()),
            ));
        }
        if n == 0 {
            return Err(Error::shape("softmax_ce_mean", "empty batch"));
        }
        let mut acc = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::shape("softmax_ce_mean", format!("target {t} out of {c} classes")));
            }
            let row = &tz.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            acc += lse - row[t];
        }
        let loss = acc / n as f64;
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCeMean { z, targets: targets.to_vec() }))
    }

    /// Reverse pass from a scalar loss. Gradients for every node become
    /// available through [`Tape::grad`]; leaves not on a path to the loss get
    /// zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract("backward requires a scalar loss node"));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(dy) = self.grads[id].take() else { continue };
            self.pullback(id, &dy);
            self.grads[id] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        match &mut self.grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn pullback(&mut self, id: usize, dy: &Tensor) {
        // Work on a borrowed op; gradients accumulate into earlier nodes only.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[1];
                let mut da = vec![0.0; n * k];
                // dA = dY B^T
                for i in 0..n {
                    for j in 0..k {
                        let mut acc = 0.0;
                        for c in 0..m {
                            acc += dy.data()[i * m + c] * tb.data()[j * m + c];
                        }
                        da[i * k + j] = acc;
                    }
                }
                let mut db = vec![0.0; k * m];
                // dB = A^T dY
                for i in 0..n {
                    let ra = &ta.data()[i * k..(i + 1) * k];
                    let rd = &dy.data()[i * m..(i + 1) * m];
                    for j in 0..k {
                        let aij = ra[j];
                        if aij == 0.0 {
                            continue;
                        }
                        let dst = &mut db[j * m..(j + 1) * m];
                        for c in 0..m {
                            dst[c] += aij * rd[c];
                        }
                    }
                }
                self.accumulate(*a, Tensor::matrix(n, k, da));
                self.accumulate(*b, Tensor::matrix(k, m, db));
            }
            Op::MatMulBt { a, b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[0];
                // dA = dY B ; dB = dY^T A
                let mut da = vec![0.0; n * k];
                mm(dy.data(), tb.data(), n, m, k, &mut da);
                let mut db = vec![0.0; m * k];
                for i in 0..n {
                    let ra = &ta.data()[i * k..(i + 1) * k];
                    for j in 0..m {
                        let d = dy.data()[i * m + j];
                        if d == 0.0 {
                            continue;
                        }
                        let dst = &mut db[j * k..(j + 1) * k];
                        for c in 0..k {
                            dst[c] += d * ra[c];
                        }
                    }
                }
                self.accumulate(*a, Tensor::matrix(n, k, da));
                self.accumulate(*b, Tensor::matrix(m, k, db));
            }
            Op::SpMm { adj, x } => {
                // S is symmetric, so dX = S dY.
                let d = self.nodes[x.0].value.shape()[1];
                let mut dx = vec![0.0; adj.n() * d];
                adj.mul_dense(dy.data(), d, &mut dx);
                self.accumulate(*x, Tensor::matrix(adj.n(), d, dx));
            }
            Op::Add { a, b } => {
                self.accumulate(*a, dy.clone());
                self.accumulate(*b, dy.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, dy.clone());
                let neg = Tensor::new(dy.shape().to_vec(), dy.data().iter().map(|v| -v).collect());
                self.accumulate(*b, neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> =
                    dy.data().iter().zip(self.nodes[b.0].value.data()).map(|(d, v)| d * v).collect();
                let db: Vec<f64> =
                    dy.data().iter().zip(self.nodes[a.0].value.data()).map(|(d, v)| d * v).collect();
                self.accumulate(*a, Tensor::new(dy.shape().to_vec(), da));
                self.accumulate(*b, Tensor::new(dy.shape().to_vec(), db));
            }
            Op::Scale { x, c } => {
                let dx = Tensor::new(dy.shape().to_vec(), dy.data().iter().map(|v| v * c).collect());
                self.accumulate(*x, dx);
            }
            Op::AddRowBroadcast { x, v } => {
                self.accumulate(*x, dy.clone());
                let m = self.nodes[id].value.last_dim();
                let n = self.nodes[id].value.rows2();
                let mut dv = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        dv[j] += dy.data()[i * m + j];
                    }
                }
                let shape = self.nodes[v.0].value.shape().to_vec();
                self.accumulate(*v, Tensor::new(shape, dv));
            }
            Op::MulRowBroadcast { x, v } => {
                let tx = &self.nodes[x.0].value;
                let row = self.nodes[v.0].value.as_row().unwrap().to_vec();
                let m = tx.last_dim();
                let n = tx.rows2();
                let mut dx = vec![0.0; n * m];
                let mut dv = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        dx[i * m + j] = dy.data()[i * m + j] * row[j];
                        dv[j] += dy.data()[i * m + j] * tx.data()[i * m + j];
                    }
                }
                self.accumulate(*x, Tensor::matrix(n, m, dx));
                let shape = self.nodes[v.0].value.shape().to_vec();
                self.accumulate(*v, Tensor::new(shape, dv));
            }
            Op::ScaleByScalar { x, s } => {
                let sv = self.nodes[s.0].value.item();
                let tx = &self.nodes[x.0].value;
                let dx = Tensor::new(dy.shape().to_vec(), dy.data().iter().map(|v| v * sv).collect());
                let ds: f64 = dy.data().iter().zip(tx.data()).map(|(d, v)| d * v).sum();
                self.accumulate(*x, dx);
                self.accumulate(*s, Tensor::scalar(ds));
            }
            Op::Tanh { x } => {
                let y = &self.nodes[id].value;
                let dx: Vec<f64> =
                    dy.data().iter().zip(y.data()).map(|(d, t)| d * (1.0 - t * t)).collect();
                self.accumulate(*x, Tensor::new(dy.shape().to_vec(), dx));
            }
            Op::Relu { x } => {
                let tx = &self.nodes[x.0].value;
                let dx: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                self.accumulate(*x, Tensor::new(dy.shape().to_vec(), dx));
            }
            Op::Sigmoid { x } => {
                let y = &self.nodes[id].value;
                let dx: Vec<f64> =
                    dy.data().iter().zip(y.data()).map(|(d, s)| d * s * (1.0 - s)).collect();
                self.accumulate(*x, Tensor::new(dy.shape().to_vec(), dx));
            }
            Op::Softmax { x } => {
                let y = &self.nodes[id].value;
                let cols = y.last_dim();
                let rows = y.numel() / cols;
                let mut dx = vec![0.0; y.numel()];
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let dr = &dy.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (dr[c] - dot);
                    }
                }
                self.accumulate(*x, Tensor::new(y.shape().to_vec(), dx));
            }
            Op::BatchNorm { x, gamma, kappa, mu, inv_std } => {
                let tx = &self.nodes[x.0].value;
                let g = self.nodes[gamma.0].value.as_row().unwrap().to_vec();
                let (n, m) = (tx.shape()[0], tx.shape()[1]);
                let nf = n as f64;
                let mut dgamma = vec![0.0; m];
                let mut dkappa = vec![0.0; m];
                let mut sum_dy = vec![0.0; m];
                let mut sum_dy_xhat = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        let xhat = (tx.data()[i * m + j] - mu[j]) * inv_std[j];
                        let d = dy.data()[i * m + j];
                        dgamma[j] += d * xhat;
                        dkappa[j] += d;
                        sum_dy[j] += d;
                        sum_dy_xhat[j] += d * xhat;
                    }
                }
                let mut dx = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        let xhat = (tx.data()[i * m + j] - mu[j]) * inv_std[j];
                        let d = dy.data()[i * m + j];
                        dx[i * m + j] = g[j] * inv_std[j] / nf
                            * (nf * d - sum_dy[j] - xhat * sum_dy_xhat[j]);
                    }
                }
                self.accumulate(*x, Tensor::matrix(n, m, dx));
                let gshape = self.nodes[gamma.0].value.shape().to_vec();
                let kshape = self.nodes[kappa.0].value.shape().to_vec();
                self.accumulate(*gamma, Tensor::new(gshape, dgamma));
                self.accumulate(*kappa, Tensor::new(kshape, dkappa));
            }
            Op::ConcatCols { a, b } => {
                let p = self.nodes[a.0].value.shape()[1];
                let q = self.nodes[b.0].value.shape()[1];
                let n = self.nodes[a.0].value.shape()[0];
                let mut da = vec![0.0; n * p];
                let mut db = vec![0.0; n * q];
                for i in 0..n {
                    da[i * p..(i + 1) * p].copy_from_slice(&dy.data()[i * (p + q)..i * (p + q) + p]);
                    db[i * q..(i + 1) * q]
                        .copy_from_slice(&dy.data()[i * (p + q) + p..(i + 1) * (p + q)]);
                }
                self.accumulate(*a, Tensor::matrix(n, p, da));
                self.accumulate(*b, Tensor::matrix(n, q, db));
            }
            Op::SliceCols { x, from } => {
                let tx = &self.nodes[x.0].value;
                let (n, m) = (tx.shape()[0], tx.shape()[1]);
                let width = self.nodes[id].value.shape()[1];
                let mut dx = vec![0.0; n * m];
                for i in 0..n {
                    dx[i * m + from..i * m + from + width]
                        .copy_from_slice(&dy.data()[i * width..(i + 1) * width]);
                }
                self.accumulate(*x, Tensor::matrix(n, m, dx));
            }
            Op::SliceTensor3 { w, index } => {
                let shape = self.nodes[w.0].value.shape().to_vec();
                let (p, q) = (shape[1], shape[2]);
                let mut dw = vec![0.0; shape.iter().product()];
                dw[index * p * q..(index + 1) * p * q].copy_from_slice(dy.data());
                self.accumulate(*w, Tensor::new(shape, dw));
            }
            Op::Reshape { x } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                self.accumulate(*x, Tensor::new(shape, dy.data().to_vec()));
            }
            Op::GatherRows { x, idx } => {
                let tx = &self.nodes[x.0].value;
                let (n, m) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; n * m];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..m {
                        dx[i * m + j] += dy.data()[r * m + j];
                    }
                }
                self.accumulate(*x, Tensor::matrix(n, m, dx));
            }
            Op::RowMean { x } => {
                let tx = &self.nodes[x.0].value;
                let (n, m) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        dx[i * m + j] = dy.data()[j] / n as f64;
                    }
                }
                self.accumulate(*x, Tensor::matrix(n, m, dx));
            }
            Op::ReduceSum { x } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let v = dy.item();
                let numel = shape.iter().product();
                self.accumulate(*x, Tensor::new(shape, vec![v; numel]));
            }
            Op::ReduceMean { x } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let numel: usize = shape.iter().product();
                let v = dy.item() / numel as f64;
                self.accumulate(*x, Tensor::new(shape, vec![v; numel]));
            }
            Op::IndexScalar { x, i } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let numel = shape.iter().product();
                let mut dx = vec![0.0; numel];
                dx[*i] = dy.item();
                self.accumulate(*x, Tensor::new(shape, dx));
            }
            Op::Bilinear { u, v, w } => {
                let (tu, tv, tw) =
                    (&self.nodes[u.0].value, &self.nodes[v.0].value, &self.nodes[w.0].value);
                let (bn, d) = (tu.shape()[0], tu.shape()[1]);
                let s = tw.shape()[0];
                let mut du = vec![0.0; bn * d];
                let mut dv = vec![0.0; bn * d];
                let mut dw = vec![0.0; s * d * d];
                for b in 0..bn {
                    let ub = &tu.data()[b * d..(b + 1) * d];
                    let vb = &tv.data()[b * d..(b + 1) * d];
                    for i in 0..s {
                        let g = dy.data()[b * s + i];
                        if g == 0.0 {
                            continue;
                        }
                        let wi = &tw.data()[i * d * d..(i + 1) * d * d];
                        let dwi = &mut dw[i * d * d..(i + 1) * d * d];
                        for r in 0..d {
                            let wr = &wi[r * d..(r + 1) * d];
                            let dur = &mut du[b * d + r];
                            let gur = g * ub[r];
                            let dwr = &mut dwi[r * d..(r + 1) * d];
                            let mut acc = 0.0;
                            for c in 0..d {
                                acc += wr[c] * vb[c];
                                dv[b * d + c] += gur * wr[c];
                                dwr[c] += gur * vb[c];
                            }
                            *dur += g * acc;
                        }
                    }
                }
                self.accumulate(*u, Tensor::matrix(bn, d, du));
                self.accumulate(*v, Tensor::matrix(bn, d, dv));
                self.accumulate(*w, Tensor::new(vec![s, d, d], dw));
            }
            Op::BceWithLogitsMean { z, labels } => {
                let tz = &self.nodes[z.0].value;
                let scale = dy.item() / labels.len() as f64;
                let dz: Vec<f64> = tz
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&zi, &yi)| scale * (sigmoid(zi) - yi))
                    .collect();
                self.accumulate(*z, Tensor::new(tz.shape().to_vec(), dz));
            }
            Op::SoftmaxCeMean { z, targets } => {
                let tz = &self.nodes[z.0].value;
                let (n, c) = (tz.shape()[0], tz.shape()[1]);
                let scale = dy.item() / n as f64;
                let mut dz = vec![0.0; n * c];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &tz.data()[i * c..(i + 1) * c];
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..c {
                        let p = (row[j] - max).exp() / sum;
                        dz[i * c + j] = scale * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(*z, Tensor::matrix(n, c, dz));
            }
        }
        self.nodes[id].op = op;
    }
}

fn shape2(t: &Tensor, op: &'static str) -> Result<[usize; 2]> {
    match t.shape() {
        &[a, b] => Ok([a, b]),
        other => Err(Error::shape(op, format!("expected 2-D, got {other:?}"))),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major `C += A B` with `A: n x k`, `B: k x m`, `C` zeroed by caller.
fn mm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, c: &mut [f64]) {
    for i in 0..n {
        let ra = &a[i * k..(i + 1) * k];
        let rc = &mut c[i * m..(i + 1) * m];
        for (j, &aij) in ra.iter().enumerate() {
            if aij == 0.0 {
                continue;
            }
            let rb = &b[j * m..(j + 1) * m];
            for (cv, bv) in rc.iter_mut().zip(rb) {
                *cv += aij * bv;
            }
        }
    }
}

/// Central-difference check of reverse-mode gradients.
///
/// `f` must be deterministic in its parameters. Returns the maximum over
/// sampled coordinates of `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`. Up to
/// `per_param` coordinates are probed per parameter, spread evenly.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, per_param: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    tape.backward(loss)?;
    let ad_grads: Vec<Tensor> = ids.iter().map(|&id| tape.grad(id)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| t.leaf(p.clone())).collect();
        let loss = f(&mut t, &ids)?;
        Ok(t.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let count = per_param.min(n).max(1);
        for c in 0..count {
            let idx = if count == 1 { 0 } else { c * (n - 1) / (count - 1) };
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[idx] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = ad_grads[pi].data()[idx];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Adam optimizer state over named parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam update with bias correction. Parameters named in `frozen`
    /// are left untouched, moments included.
    pub fn apply(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        frozen: &BTreeSet<String>,
    ) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            if frozen.contains(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", format!("{name}: {:?} vs {:?}", g.shape(), p.shape())));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
