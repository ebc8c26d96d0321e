//! AdamW with decoupled weight decay and bias-corrected moments.

use super::array::{Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

impl<T: Scalar> Default for AdamWConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(1e-4),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay: T::lit(0.01),
        }
    }
}

/// Moment accumulators shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig<T>,
    pub state: OptimState<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig<T>, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self { config, state: OptimState { first: zeros(), second: zeros(), step: 0 } }
    }

    /// Applies one update to every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<(), TensorError> {
        if params.len() != grads.len() || params.len() != self.state.first.len() {
            return Err(TensorError::Invalid {
                op: "adamw_step",
                msg: format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), self.state.first.len()),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g, "adamw_step")?;
        }
        for (i, p) in params.iter().enumerate() {
            if self.state.first[i].len() != p.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: vec![self.state.first[i].len()],
                });
            }
        }

        self.state.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let t = self.state.step as i32;
        let bc1 = T::one() - beta1.powi(t);
        let bc2 = T::one() - beta2.powi(t);
        let decay = T::one() - lr * weight_decay;

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.state.first[i];
            let v = &mut self.state.second[i];
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *pv *= decay;
                *mv = beta1 * *mv + (T::one() - beta1) * gv;
                *vv = beta2 * *vv + (T::one() - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
