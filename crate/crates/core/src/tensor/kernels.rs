//! Forward and backward kernels over flat row-major buffers.
//!
//! The graph calls into these; the eager wrappers at the bottom expose the
//! forward passes on [`Tensor`] values directly.

use super::array::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Variance epsilon of layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Norms below this are floored before dividing in cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    c.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            c[i * k + j] += s;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// In-place numerically stable softmax over each row of width `cols`.
pub fn softmax_rows<T: Scalar>(x: &mut [T], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Softmax Jacobian-vector product: `dx = y ⊙ (dy − ⟨dy, y⟩)` per row.
pub fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T], cols: usize) {
    for ((yr, dyr), dxr) in y.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += yv * (g - dot);
        }
    }
}

/// Row-wise layer normalization. Returns `(out, normalized, inv_std)`.
pub fn layer_norm_forward<T: Scalar>(x: &[T], gain: &[T], bias: &[T], cols: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / cols;
    let n = T::lit(cols as f64);
    let eps = T::lit(LAYER_NORM_EPS);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = (var + eps).sqrt().recip();
        inv_std[r] = is;
        for c in 0..cols {
            let h = (row[c] - mean) * is;
            xhat[r * cols + c] = h;
            out[r * cols + c] = h * gain[c] + bias[c];
        }
    }
    (out, xhat, inv_std)
}

/// Accumulates gradients of layer normalization into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gain: &[T],
    cols: usize,
    dx: Option<&mut [T]>,
    dgain: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let rows = dy.len() / cols;
    if let Some(dg) = dgain {
        for r in 0..rows {
            for c in 0..cols {
                dg[c] += dy[r * cols + c] * xhat[r * cols + c];
            }
        }
    }
    if let Some(db) = dbias {
        for r in 0..rows {
            for c in 0..cols {
                db[c] += dy[r * cols + c];
            }
        }
    }
    if let Some(dx) = dx {
        let n = T::lit(cols as f64);
        let mut g = vec![T::zero(); cols];
        for (r, &inv) in inv_std.iter().enumerate().take(rows) {
            let off = r * cols;
            let mut mean_g = T::zero();
            let mut mean_gx = T::zero();
            for c in 0..cols {
                g[c] = dy[off + c] * gain[c];
                mean_g += g[c];
                mean_gx += g[c] * xhat[off + c];
            }
            mean_g /= n;
            mean_gx /= n;
            for c in 0..cols {
                dx[off + c] += inv * (g[c] - mean_g - xhat[off + c] * mean_gx);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Geometry of a block-causal multi-head attention call.
///
/// Rows are grouped into consecutive blocks of `seq_len` positions; each block
/// is an independent sequence and position `i` attends to positions `0..=i`
/// of its own block only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub blocks: usize,
    pub seq_len: usize,
    pub heads: usize,
    pub model_dim: usize,
}

impl AttentionShape {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    fn probs_len(&self) -> usize {
        self.blocks * self.heads * self.seq_len * self.seq_len
    }

    fn probs_offset(&self, block: usize, head: usize) -> usize {
        (block * self.heads + head) * self.seq_len * self.seq_len
    }
}

/// Causal attention forward. Returns `(out, probs)`; `probs` holds the
/// lower-triangular attention weights with zeros above the diagonal.
pub fn causal_attention_forward<T: Scalar>(q: &[T], k: &[T], v: &[T], shape: AttentionShape) -> (Vec<T>, Vec<T>) {
    let AttentionShape { blocks, seq_len: s, heads, model_dim: d } = shape;
    let hd = shape.head_dim();
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); shape.probs_len()];
    for b in 0..blocks {
        let base = b * s * d;
        for h in 0..heads {
            let ho = h * hd;
            let p = &mut probs[shape.probs_offset(b, h)..shape.probs_offset(b, h) + s * s];
            for i in 0..s {
                let qi = &q[base + i * d + ho..base + i * d + ho + hd];
                let prow = &mut p[i * s..i * s + i + 1];
                for (j, pv) in prow.iter_mut().enumerate() {
                    let kj = &k[base + j * d + ho..base + j * d + ho + hd];
                    *pv = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale;
                }
                softmax_rows(prow, i + 1);
                let orow = &mut out[base + i * d + ho..base + i * d + ho + hd];
                for (j, &pv) in prow.iter().enumerate() {
                    let vj = &v[base + j * d + ho..base + j * d + ho + hd];
                    for (o, &vv) in orow.iter_mut().zip(vj) {
                        *o += pv * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Accumulates `dq`, `dk`, `dv` for [`causal_attention_forward`].
#[allow(clippy::too_many_arguments)]
pub fn causal_attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    shape: AttentionShape,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let AttentionShape { blocks, seq_len: s, heads, model_dim: d } = shape;
    let hd = shape.head_dim();
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let mut dp = vec![T::zero(); s];
    for b in 0..blocks {
        let base = b * s * d;
        for h in 0..heads {
            let ho = h * hd;
            let p = &probs[shape.probs_offset(b, h)..shape.probs_offset(b, h) + s * s];
            for i in 0..s {
                let doi = &dout[base + i * d + ho..base + i * d + ho + hd];
                let prow = &p[i * s..i * s + i + 1];
                let mut dot = T::zero();
                for j in 0..=i {
                    let vj = &v[base + j * d + ho..base + j * d + ho + hd];
                    dp[j] = doi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                    dot += dp[j] * prow[j];
                    let dvj = &mut dv[base + j * d + ho..base + j * d + ho + hd];
                    for (g, &o) in dvj.iter_mut().zip(doi) {
                        *g += prow[j] * o;
                    }
                }
                let qi_off = base + i * d + ho;
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let kj_off = base + j * d + ho;
                    for c in 0..hd {
                        dq[qi_off + c] += ds * k[kj_off + c];
                        dk[kj_off + c] += ds * q[qi_off + c];
                    }
                }
            }
        }
    }
}

/// Per-row cosine similarity with norms floored at [`NORM_FLOOR`].
/// Returns `(cos, |a|, |b|)` per row.
pub fn row_cosines<T: Scalar>(a: &[T], b: &[T], cols: usize) -> Vec<(T, T, T)> {
    let floor = T::lit(NORM_FLOOR);
    a.chunks(cols)
        .zip(b.chunks(cols))
        .map(|(x, y)| {
            let dot: T = x.iter().zip(y).map(|(&p, &q)| p * q).sum();
            let nx = x.iter().map(|&p| p * p).sum::<T>().sqrt().max(floor);
            let ny = y.iter().map(|&p| p * p).sum::<T>().sqrt().max(floor);
            (dot / (nx * ny), nx, ny)
        })
        .collect()
}

// ---- eager wrappers --------------------------------------------------------

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (m, k) = a.matrix_dims("matmul")?;
    let (k2, n) = b.matrix_dims("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch { op: "matmul", left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    let mut c = vec![T::zero(); m * n];
    matmul_into(a.data(), b.data(), &mut c, m, k, n);
    Tensor::new(vec![m, n], c)
}

pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let cols = x.last_dim();
    softmax_rows(out.data_mut(), cols);
    out.requires_grad = false;
    out
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let cols = x.last_dim();
    if gain.len() != cols || bias.len() != cols {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let (out, _, _) = layer_norm_forward(x.data(), gain.data(), bias.data(), cols);
    Tensor::new(x.shape().to_vec(), out)
}

/// Single-sequence causal attention over `[positions × dim]` inputs.
pub fn causal_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>, TensorError> {
    q.same_shape(k, "causal_attention")?;
    q.same_shape(v, "causal_attention")?;
    let (s, d) = q.matrix_dims("causal_attention")?;
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::Invalid {
            op: "causal_attention",
            msg: format!("model dim {d} not divisible by {heads} heads"),
        });
    }
    let shape = AttentionShape { blocks: 1, seq_len: s, heads, model_dim: d };
    let (out, _) = causal_attention_forward(q.data(), k.data(), v.data(), shape);
    Tensor::new(vec![s, d], out)
}
