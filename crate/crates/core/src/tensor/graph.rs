//! Tape-style reverse-mode autodiff.
//!
//! A [`Graph`] records nodes in creation order, so parents always precede
//! children and the reverse pass is a single backward sweep.

use super::array::{Tensor, TensorError};
use super::kernels::{self, AttentionShape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-defined differentiable operation.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError>;
    /// Returns one gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    AddTiled { x: NodeId, pattern: NodeId },
    Scale(NodeId, T),
    Sum(NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<T>, inv_std: Vec<T> },
    Attention { q: NodeId, k: NodeId, v: NodeId, shape: AttentionShape, probs: Vec<T> },
    InsertToken { frames: NodeId, token: NodeId, window: usize },
    SelectRows { x: NodeId, block: usize, offset: usize },
    CosineError { pred: NodeId, target: Tensor<T>, cached: Vec<(T, T, T)> },
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Inserts a leaf honouring `t.requires_grad`.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t.with_grad(true), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t.with_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "add")?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `x[r×c] + bias[c]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let c = vx.last_dim();
        if vb.len() != c {
            return Err(mismatch("add_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// Adds `pattern[p×c]` to every consecutive block of `p` rows of `x`.
    pub fn add_tiled(&mut self, x: NodeId, pattern: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vp) = (self.value(x), self.value(pattern));
        if vx.last_dim() != vp.last_dim() || vx.len() % vp.len() != 0 {
            return Err(mismatch("add_tiled", vx.shape(), vp.shape()));
        }
        let mut out = vx.clone();
        for block in out.data_mut().chunks_mut(vp.len()) {
            for (o, &p) in block.iter_mut().zip(vp.data()) {
                *o += p;
            }
        }
        let rg = self.rg(&[x, pattern]);
        Ok(self.push(out, Op::AddTiled { x, pattern }, rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(kernels::gelu);
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let out = kernels::softmax_lastdim(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax(x), rg)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let vx = self.value(x);
        let cols = vx.last_dim();
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.len() != cols || vb.len() != cols {
            return Err(mismatch("layer_norm", vx.shape(), vg.shape()));
        }
        let (out, xhat, inv_std) = kernels::layer_norm_forward(vx.data(), vg.data(), vb.data(), cols);
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Block-causal multi-head attention over rows grouped in blocks of `seq_len`.
    pub fn causal_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        seq_len: usize,
        heads: usize,
    ) -> Result<NodeId, TensorError> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        vq.same_shape(vk, "causal_attention")?;
        vq.same_shape(vv, "causal_attention")?;
        let (rows, d) = vq.matrix_dims("causal_attention")?;
        if seq_len == 0 || rows % seq_len != 0 || heads == 0 || d % heads != 0 {
            return Err(TensorError::Invalid {
                op: "causal_attention",
                msg: format!("rows {rows}, seq_len {seq_len}, dim {d}, heads {heads}"),
            });
        }
        let shape = AttentionShape { blocks: rows / seq_len, seq_len, heads, model_dim: d };
        let (out, probs) = kernels::causal_attention_forward(vq.data(), vk.data(), vv.data(), shape);
        let out = Tensor::new(vec![rows, d], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(out, Op::Attention { q, k, v, shape, probs }, rg))
    }

    /// Appends `token[d]` after every block of `window` frame rows.
    pub fn insert_token(&mut self, frames: NodeId, token: NodeId, window: usize) -> Result<NodeId, TensorError> {
        let (vf, vt) = (self.value(frames), self.value(token));
        let (rows, d) = vf.matrix_dims("insert_token")?;
        if vt.len() != d || window == 0 || rows % window != 0 {
            return Err(mismatch("insert_token", vf.shape(), vt.shape()));
        }
        let blocks = rows / window;
        let mut data = Vec::with_capacity((rows + blocks) * d);
        for block in vf.data().chunks(window * d) {
            data.extend_from_slice(block);
            data.extend_from_slice(vt.data());
        }
        let out = Tensor::new(vec![rows + blocks, d], data)?;
        let rg = self.rg(&[frames, token]);
        Ok(self.push(out, Op::InsertToken { frames, token, window }, rg))
    }

    /// Picks row `offset` of each consecutive block of `block` rows.
    pub fn select_rows(&mut self, x: NodeId, block: usize, offset: usize) -> Result<NodeId, TensorError> {
        let vx = self.value(x);
        let (rows, d) = vx.matrix_dims("select_rows")?;
        if block == 0 || offset >= block || rows % block != 0 {
            return Err(TensorError::Invalid {
                op: "select_rows",
                msg: format!("rows {rows}, block {block}, offset {offset}"),
            });
        }
        let n = rows / block;
        let mut data = Vec::with_capacity(n * d);
        for b in 0..n {
            data.extend_from_slice(vx.row(b * block + offset));
        }
        let out = Tensor::new(vec![n, d], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SelectRows { x, block, offset }, rg))
    }

    /// Per-row scaled cosine distance `½(1 − cos(pred, target))`.
    pub fn cosine_error(&mut self, pred: NodeId, target: Tensor<T>) -> Result<NodeId, TensorError> {
        let vp = self.value(pred);
        vp.same_shape(&target, "cosine_error")?;
        let cols = vp.last_dim();
        let cached = kernels::row_cosines(vp.data(), target.data(), cols);
        let half = T::lit(0.5);
        let eps: Vec<T> = cached.iter().map(|&(c, _, _)| half * (T::one() - c)).collect();
        let out = Tensor::vector(eps);
        let rg = self.rg(&[pred]);
        Ok(self.push(out, Op::CosineError { pred, target, cached }, rg))
    }

    pub fn custom(&mut self, inputs: &[NodeId], op: Box<dyn CustomOp<T>>) -> Result<NodeId, TensorError> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
        let out = op.forward(&values)?;
        let rg = self.rg(inputs);
        Ok(self.push(out, Op::Custom { inputs: inputs.to_vec(), op }, rg))
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `id` as a tensor shaped like its value; zeros if unreached.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor<T> {
        let shape = self.value(id).shape().to_vec();
        match self.grad(id) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        let zeros = |id: NodeId| vec![T::zero(); nodes[id.0].value.len()];
        let mut out: Vec<(NodeId, Vec<T>)> = Vec::with_capacity(3);
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if wants(*a) {
                    let mut da = zeros(*a);
                    kernels::matmul_nt_acc(g, vb.data(), &mut da, m, n, k);
                    out.push((*a, da));
                }
                if wants(*b) {
                    let mut db = zeros(*b);
                    kernels::matmul_tn_acc(va.data(), g, &mut db, m, k, n);
                    out.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if wants(id) {
                        out.push((id, g.to_vec()));
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if wants(*x) {
                    out.push((*x, g.to_vec()));
                }
                if wants(*bias) {
                    let mut db = zeros(*bias);
                    let c = db.len();
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    out.push((*bias, db));
                }
            }
            Op::AddTiled { x, pattern } => {
                if wants(*x) {
                    out.push((*x, g.to_vec()));
                }
                if wants(*pattern) {
                    let mut dp = zeros(*pattern);
                    let n = dp.len();
                    for block in g.chunks(n) {
                        dp.iter_mut().zip(block).for_each(|(d, &v)| *d += v);
                    }
                    out.push((*pattern, dp));
                }
            }
            Op::Scale(x, f) => {
                if wants(*x) {
                    out.push((*x, g.iter().map(|&v| v * *f).collect()));
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    out.push((*x, vec![g[0]; nodes[x.0].value.len()]));
                }
            }
            Op::Gelu(x) => {
                if wants(*x) {
                    let vx = nodes[x.0].value.data();
                    out.push((*x, g.iter().zip(vx).map(|(&gv, &xv)| gv * kernels::gelu_grad(xv)).collect()));
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let y = &nodes[idx].value;
                    let mut dx = zeros(*x);
                    kernels::softmax_rows_backward(y.data(), g, &mut dx, y.last_dim());
                    out.push((*x, dx));
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let cols = nodes[x.0].value.last_dim();
                let vg = nodes[gain.0].value.data();
                let mut dx = wants(*x).then(|| zeros(*x));
                let mut dg = wants(*gain).then(|| zeros(*gain));
                let mut db = wants(*bias).then(|| zeros(*bias));
                kernels::layer_norm_backward(
                    g,
                    xhat,
                    inv_std,
                    vg,
                    cols,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (id, d) in [(*x, dx), (*gain, dg), (*bias, db)] {
                    if let Some(d) = d {
                        out.push((id, d));
                    }
                }
            }
            Op::Attention { q, k, v, shape, probs } => {
                let mut dq = vec![T::zero(); g.len()];
                let mut dk = vec![T::zero(); g.len()];
                let mut dv = vec![T::zero(); g.len()];
                kernels::causal_attention_backward(
                    nodes[q.0].value.data(),
                    nodes[k.0].value.data(),
                    nodes[v.0].value.data(),
                    probs,
                    g,
                    *shape,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for (id, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if wants(id) {
                        out.push((id, d));
                    }
                }
            }
            Op::InsertToken { frames, token, window } => {
                let d = nodes[token.0].value.len();
                let block = (window + 1) * d;
                if wants(*frames) {
                    let mut df = Vec::with_capacity(nodes[frames.0].value.len());
                    for gb in g.chunks(block) {
                        df.extend_from_slice(&gb[..window * d]);
                    }
                    out.push((*frames, df));
                }
                if wants(*token) {
                    let mut dt = zeros(*token);
                    for gb in g.chunks(block) {
                        dt.iter_mut().zip(&gb[window * d..]).for_each(|(a, &b)| *a += b);
                    }
                    out.push((*token, dt));
                }
            }
            Op::SelectRows { x, block, offset } => {
                if wants(*x) {
                    let d = nodes[x.0].value.last_dim();
                    let mut dx = zeros(*x);
                    for (b, gr) in g.chunks(d).enumerate() {
                        let r = b * block + offset;
                        dx[r * d..(r + 1) * d].copy_from_slice(gr);
                    }
                    out.push((*x, dx));
                }
            }
            Op::CosineError { pred, target, cached } => {
                if wants(*pred) {
                    let vp = &nodes[pred.0].value;
                    let cols = vp.last_dim();
                    let half = T::lit(0.5);
                    let mut dp = zeros(*pred);
                    for (r, &(cos, np, nt)) in cached.iter().enumerate() {
                        // d cos / d p = t/(|p||t|) − cos · p/|p|²
                        let p = vp.row(r);
                        let t = target.row(r);
                        let coef = -half * g[r];
                        for c in 0..cols {
                            dp[r * cols + c] = coef * (t[c] / (np * nt) - cos * p[c] / (np * np));
                        }
                    }
                    out.push((*pred, dp));
                }
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&i| &nodes[i.0].value).collect();
                let dins = op.backward(&values, &nodes[idx].value, g);
                for (&id, d) in inputs.iter().zip(dins) {
                    if wants(id) {
                        out.push((id, d));
                    }
                }
            }
        }
        for (id, d) in out {
            match &mut grads[id.0] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(d),
            }
        }
    }
}
