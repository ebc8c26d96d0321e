//! Central finite-difference gradient checking.

use thiserror::Error;

use super::array::{Tensor, TensorError};
use super::graph::{Graph, NodeId};
use crate::scalar::Scalar;

/// Denominator floor of the relative error, so entries whose true gradient
/// is ~0 are judged on absolute agreement.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("h must be positive, got {0}")]
    BadStep(f64),
    #[error("non-finite loss while perturbing parameter {param} entry {entry}")]
    NonFinite { param: usize, entry: usize },
    #[error("invalid gradient check setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval<T, F>(params: &[Tensor<T>], build: &F) -> Result<(Graph<T>, Vec<NodeId>, NodeId), TensorError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| graph.param(p.clone())).collect();
    let loss = build(&mut graph, &ids)?;
    Ok((graph, ids, loss))
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences `(L(p+h) − L(p−h)) / 2h` for every parameter entry.
pub fn grad_check<T, F>(params: &[Tensor<T>], h: T, tol: f64, build: F) -> Result<GradCheckReport, GradCheckError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId, TensorError>,
{
    if !(h > T::zero()) {
        return Err(GradCheckError::BadStep(h.as_f64()));
    }
    let (mut graph, ids, loss) = eval(params, &build)?;
    if !graph.value(loss).item().is_finite() {
        return Err(GradCheckError::NonFinite { param: 0, entry: 0 });
    }
    graph.backward(loss)?;
    let analytic: Vec<Tensor<T>> = ids.iter().map(|&id| graph.grad_tensor(id)).collect();

    let mut work = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    let two_h = (h + h).as_f64();
    for (pi, grad) in analytic.iter().enumerate() {
        let mut check = ParamCheck { index: pi, max_rel_error: 0.0, worst_entry: 0, analytic: 0.0, numeric: 0.0 };
        for e in 0..params[pi].len() {
            let orig = work[pi].data()[e];
            let mut probe = |v: T| -> Result<f64, GradCheckError> {
                work[pi].data_mut()[e] = v;
                let (g, _, l) = eval(&work, &build)?;
                let val = g.value(l).item().as_f64();
                if !val.is_finite() {
                    return Err(GradCheckError::NonFinite { param: pi, entry: e });
                }
                Ok(val)
            };
            let plus = probe(orig + h)?;
            let minus = probe(orig - h)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (plus - minus) / two_h;
            let a = grad.data()[e].as_f64();
            let rel = relative_error(a, numeric);
            if rel >= check.max_rel_error {
                check = ParamCheck { index: pi, max_rel_error: rel, worst_entry: e, analytic: a, numeric };
            }
        }
        checks.push(check);
    }
    Ok(GradCheckReport { params: checks, tol })
}
