//! Pre-norm causal transformer decoder with a trailing query token.
//!
//! Each input is a window of `L` past frames. Frames are projected to the
//! model width, the learnable token is appended as position `L`, learned
//! positional embeddings are added, and the token's final hidden state is
//! projected back to feature space as the prediction of the next frame.
//! The causal mask lets the token attend to every frame while frames never
//! attend to the token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::batch::{push_window, TrainingBatch};
use super::config::CeaConfig;
use crate::io::FeatureStream;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

const PER_LAYER: usize = 16;
const INPUT_W: usize = 0;
const INPUT_B: usize = 1;
const POS: usize = 2;
const TOKEN: usize = 3;
const LAYER_BASE: usize = 4;

const LAYER_NAMES: [&str; PER_LAYER] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln2.gain", "ln2.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2",
];

/// Windows per graph when scoring a whole stream.
const SCORE_CHUNK: usize = 256;

/// Every learnable tensor of the anticipator, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: CeaConfig,
    tensors: Vec<Tensor<T>>,
}

fn layer_slot(layer: usize, offset: usize) -> usize {
    LAYER_BASE + layer * PER_LAYER + offset
}

/// Parameter names in storage order.
pub fn param_names(config: &CeaConfig) -> Vec<String> {
    let mut names = vec!["input.weight".into(), "input.bias".into(), "pos_embed".into(), "token".into()];
    for l in 0..config.layers {
        names.extend(LAYER_NAMES.iter().map(|n| format!("layers.{l}.{n}")));
    }
    names.extend(["final_ln.gain", "final_ln.bias", "output.weight", "output.bias"].map(String::from));
    names
}

/// Parameter shapes in storage order.
pub fn param_shapes(c: &CeaConfig) -> Vec<Vec<usize>> {
    let (d, m, f) = (c.feature_dim, c.model_dim, c.ff_dim);
    let mut shapes = vec![vec![d, m], vec![m], vec![c.seq_len(), m], vec![m]];
    for _ in 0..c.layers {
        shapes.extend([
            vec![m],
            vec![m],
            vec![m, m],
            vec![m],
            vec![m, m],
            vec![m],
            vec![m, m],
            vec![m],
            vec![m, m],
            vec![m],
            vec![m],
            vec![m],
            vec![m, f],
            vec![f],
            vec![f, m],
            vec![m],
        ]);
    }
    shapes.extend([vec![m], vec![m], vec![m, d], vec![d]]);
    shapes
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: normal weights scaled by `1/√fan_in` (residual
    /// output projections further by `1/√(2·layers)`), zero biases, unit
    /// norm gains, small positional embeddings and token.
    pub fn init(config: CeaConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = param_names(&config);
        let shapes = param_shapes(&config);
        let residual = 1.0 / (2.0 * config.layers as f64).sqrt();
        let tensors = names
            .iter()
            .zip(&shapes)
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let std = if name.ends_with("gain") || name.ends_with("bias") || name.starts_with("input.bias") {
                    None
                } else if name == "pos_embed" || name == "token" {
                    Some(0.1)
                } else {
                    let fan_in = shape[0] as f64;
                    let scale = if name.ends_with("wo") || name.ends_with("w2") { residual } else { 1.0 };
                    Some(scale / fan_in.sqrt())
                };
                let data: Vec<T> = match std {
                    None if name.ends_with("gain") => vec![T::one(); n],
                    None => vec![T::zero(); n],
                    Some(s) => {
                        let dist = Normal::new(0.0, s).expect("finite std");
                        (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect()
                    }
                };
                Tensor::new(shape.clone(), data).expect("shape product")
            })
            .collect();
        Self { config, tensors }
    }

    /// Assembles parameters from named tensors, checking names and shapes.
    pub fn from_named(config: CeaConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, TensorError> {
        let names = param_names(&config);
        let shapes = param_shapes(&config);
        if named.len() != names.len() {
            return Err(TensorError::Invalid {
                op: "from_named",
                msg: format!("expected {} tensors, got {}", names.len(), named.len()),
            });
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want, shape)) in named.into_iter().zip(names.iter().zip(&shapes)) {
            if &name != want || t.shape() != shape.as_slice() {
                return Err(TensorError::Invalid {
                    op: "from_named",
                    msg: format!("expected {want} {shape:?}, got {name} {:?}", t.shape()),
                });
            }
            tensors.push(t);
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &CeaConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor<T>)> {
        param_names(&self.config).into_iter().zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Zeroes the output projection, forcing every prediction to zero.
    pub fn zero_output(&mut self) {
        let n = self.tensors.len();
        for t in &mut self.tensors[n - 2..] {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn insert(&self, g: &mut Graph<T>, trainable: bool) -> Vec<NodeId> {
        self.tensors.iter().map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect()
    }

    /// Builds the decoder over `(B·L) × D` stacked windows; returns the
    /// `B × D` prediction node.
    pub fn forward_graph(&self, g: &mut Graph<T>, p: &[NodeId], windows: Tensor<T>) -> Result<NodeId, TensorError> {
        let c = &self.config;
        let (rows, d) = windows.matrix_dims("forward")?;
        if d != c.feature_dim || rows % c.window_len != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "forward",
                left: windows.shape().to_vec(),
                right: vec![c.window_len, c.feature_dim],
            });
        }
        let x = g.constant(windows);
        let x = g.matmul(x, p[INPUT_W])?;
        let x = g.add_bias(x, p[INPUT_B])?;
        let x = g.insert_token(x, p[TOKEN], c.window_len)?;
        let mut x = g.add_tiled(x, p[POS])?;
        for l in 0..c.layers {
            let s = |o| p[layer_slot(l, o)];
            let h = g.layer_norm(x, s(0), s(1))?;
            let q = g.matmul(h, s(2))?;
            let q = g.add_bias(q, s(3))?;
            let k = g.matmul(h, s(4))?;
            let k = g.add_bias(k, s(5))?;
            let v = g.matmul(h, s(6))?;
            let v = g.add_bias(v, s(7))?;
            let a = g.causal_attention(q, k, v, c.seq_len(), c.heads)?;
            let o = g.matmul(a, s(8))?;
            let o = g.add_bias(o, s(9))?;
            x = g.add(x, o)?;
            let h = g.layer_norm(x, s(10), s(11))?;
            let f = g.matmul(h, s(12))?;
            let f = g.add_bias(f, s(13))?;
            let f = g.gelu(f);
            let f = g.matmul(f, s(14))?;
            let f = g.add_bias(f, s(15))?;
            x = g.add(x, f)?;
        }
        let n = p.len();
        let x = g.layer_norm(x, p[n - 4], p[n - 3])?;
        let token = g.select_rows(x, c.seq_len(), c.window_len)?;
        let y = g.matmul(token, p[n - 2])?;
        g.add_bias(y, p[n - 1])
    }

    /// Predictions for `(B·L) × D` stacked windows, without gradients.
    pub fn predict(&self, windows: Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut g = Graph::new();
        let p = self.insert(&mut g, false);
        let y = self.forward_graph(&mut g, &p, windows)?;
        Ok(g.value(y).clone())
    }

    /// Predicts the next frame from exactly `L` past frames of dimension `D`.
    pub fn forward_window(&self, window: &[Vec<T>]) -> Result<Vec<T>, TensorError> {
        if window.len() != self.config.window_len {
            return Err(TensorError::ShapeMismatch {
                op: "forward_window",
                left: vec![window.len()],
                right: vec![self.config.window_len],
            });
        }
        let t = Tensor::from_rows(window)?;
        Ok(self.predict(t)?.into_data())
    }

    /// Graph of the batch objective; returns `(loss, errors)` nodes.
    pub fn loss_graph(
        &self,
        g: &mut Graph<T>,
        p: &[NodeId],
        batch: &TrainingBatch<T>,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let pred = self.forward_graph(g, p, batch.windows.clone())?;
        let errors = g.cosine_error(pred, batch.targets.clone())?;
        let loss = g.custom(&[errors], Box::new(batch.objective.clone()))?;
        Ok((loss, errors))
    }

    /// Batch objective value and its gradient for every parameter.
    pub fn loss_and_grads(&self, batch: &TrainingBatch<T>) -> Result<(T, Vec<Tensor<T>>), TensorError> {
        let mut g = Graph::new();
        let p = self.insert(&mut g, true);
        let (loss, _) = self.loss_graph(&mut g, &p, batch)?;
        g.backward(loss)?;
        let grads = p.iter().map(|&id| g.grad_tensor(id)).collect();
        Ok((g.value(loss).item(), grads))
    }

    /// Scaled cosine error of every frame `t ≥ 1`, each predicted from its
    /// own past window. Index 0 of the result is frame 1.
    pub fn error_trace(&self, stream: &FeatureStream) -> Result<Vec<T>, TensorError> {
        let c = &self.config;
        if stream.dim() != c.feature_dim {
            return Err(TensorError::ShapeMismatch {
                op: "error_trace",
                left: vec![stream.dim()],
                right: vec![c.feature_dim],
            });
        }
        let frames: Vec<usize> = (1..stream.len()).collect();
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(SCORE_CHUNK) {
            let mut w = Vec::with_capacity(chunk.len() * c.window_len * c.feature_dim);
            let mut targets = Vec::with_capacity(chunk.len() * c.feature_dim);
            for &t in chunk {
                push_window(stream, t, c.window_len, &mut w);
                targets.extend(stream.frame(t).iter().map(|&v| T::lit(v)));
            }
            let windows = Tensor::new(vec![chunk.len() * c.window_len, c.feature_dim], w)?;
            let pred = self.predict(windows)?;
            for (i, row) in targets.chunks(c.feature_dim).enumerate() {
                out.push(super::loss::cosine_error(row, pred.row(i)));
            }
        }
        Ok(out)
    }
}
