//! Prediction-error losses.
//!
//! The per-frame error is the scaled cosine distance between the predicted
//! and the observed feature. The frame-level loss is a binary cross-entropy
//! that pushes errors up on boundary frames and down elsewhere; the
//! region-level loss applies the same cross-entropy to the mean error of the
//! `K + 1` most recent frames, labelled by the last frame only.

use crate::scalar::Scalar;
use crate::tensor::kernels::NORM_FLOOR;
use crate::tensor::{CustomOp, Tensor, TensorError};

/// Errors are clamped to `[CLAMP, 1 − CLAMP]` before taking logarithms.
pub const CLAMP: f64 = 1e-7;
/// Bounds of the batch-wise positive weight.
pub const POS_WEIGHT_RANGE: (f64, f64) = (1.0, 100.0);

/// `½(1 − cos(f, f̂))`, with both norms floored at `1e-12`. Result lies in `[0, 1]`.
pub fn cosine_error<T: Scalar>(actual: &[T], predicted: &[T]) -> T {
    let floor = T::lit(NORM_FLOOR);
    let dot: T = actual.iter().zip(predicted).map(|(&a, &b)| a * b).sum();
    let na = actual.iter().map(|&a| a * a).sum::<T>().sqrt().max(floor);
    let np = predicted.iter().map(|&b| b * b).sum::<T>().sqrt().max(floor);
    let cos = (dot / (na * np)).max(-T::one()).min(T::one());
    T::lit(0.5) * (T::one() - cos)
}

fn clamp<T: Scalar>(eps: T) -> T {
    let c = T::lit(CLAMP);
    eps.max(c).min(T::one() - c)
}

/// Binary cross-entropy of an error against a boundary label.
pub fn est_loss<T: Scalar>(eps: T, boundary: bool) -> T {
    let e = clamp(eps);
    if boundary {
        -e.ln()
    } else {
        -(T::one() - e).ln()
    }
}

/// Derivative of [`est_loss`] in `eps`, evaluated at the clamped value.
pub fn est_loss_grad<T: Scalar>(eps: T, boundary: bool) -> T {
    let e = clamp(eps);
    if boundary {
        -e.recip()
    } else {
        (T::one() - e).recip()
    }
}

/// Frame-level loss applied to the mean of the region's errors, using the
/// label of the region's last frame.
pub fn rest_loss<T: Scalar>(region_errors: &[T], last_is_boundary: bool) -> T {
    est_loss(mean(region_errors), last_is_boundary)
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::lit(xs.len() as f64)
}

/// `alpha · rest + Σ est` over one region, errors and labels ordered oldest first.
pub fn combined_loss<T: Scalar>(errors: &[T], labels: &[bool], alpha: T) -> T {
    weighted_combined_loss(errors, labels, alpha, T::one())
}

/// [`combined_loss`] with frame-level terms on boundary frames scaled by `pos_weight`.
pub fn weighted_combined_loss<T: Scalar>(errors: &[T], labels: &[bool], alpha: T, pos_weight: T) -> T {
    assert_eq!(errors.len(), labels.len(), "one label per error");
    let last = *labels.last().expect("non-empty region");
    let frame_terms: T = errors
        .iter()
        .zip(labels)
        .map(|(&e, &y)| if y { pos_weight * est_loss(e, true) } else { est_loss(e, false) })
        .sum();
    alpha * rest_loss(errors, last) + frame_terms
}

/// `N_neg / N_pos` clipped to `[1, 100]`; `1` when the batch has no positives.
pub fn positive_weight(positives: usize, negatives: usize) -> f64 {
    if positives == 0 {
        return 1.0;
    }
    (negatives as f64 / positives as f64).clamp(POS_WEIGHT_RANGE.0, POS_WEIGHT_RANGE.1)
}

/// Batch objective over a vector of per-window errors.
///
/// Each region lists `K + 1` indices into the error vector, oldest first. The
/// value is the mean over regions of [`weighted_combined_loss`].
#[derive(Debug, Clone)]
pub struct RegionObjective {
    pub regions: Vec<Vec<usize>>,
    pub labels: Vec<bool>,
    pub alpha: f64,
    pub pos_weight: f64,
}

impl RegionObjective {
    /// Builds the objective, deriving the positive weight from every label
    /// slot referenced by the regions.
    pub fn new(regions: Vec<Vec<usize>>, labels: Vec<bool>, alpha: f64) -> Self {
        let (mut pos, mut neg) = (0usize, 0usize);
        for r in &regions {
            for &i in r {
                if labels[i] {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
        let pos_weight = positive_weight(pos, neg);
        Self { regions, labels, alpha, pos_weight }
    }

    pub fn value<T: Scalar>(&self, errors: &[T]) -> T {
        let alpha = T::lit(self.alpha);
        let w = T::lit(self.pos_weight);
        let mut total = T::zero();
        let mut errs = Vec::new();
        let mut labs = Vec::new();
        for r in &self.regions {
            errs.clear();
            labs.clear();
            errs.extend(r.iter().map(|&i| errors[i]));
            labs.extend(r.iter().map(|&i| self.labels[i]));
            total += weighted_combined_loss(&errs, &labs, alpha, w);
        }
        total / T::lit(self.regions.len() as f64)
    }

    pub fn gradient<T: Scalar>(&self, errors: &[T]) -> Vec<T> {
        let alpha = T::lit(self.alpha);
        let w = T::lit(self.pos_weight);
        let inv_regions = T::lit(1.0 / self.regions.len() as f64);
        let mut grad = vec![T::zero(); errors.len()];
        for r in &self.regions {
            let last = self.labels[*r.last().expect("non-empty region")];
            let m = r.iter().map(|&i| errors[i]).sum::<T>() / T::lit(r.len() as f64);
            let rest = alpha * est_loss_grad(m, last) / T::lit(r.len() as f64);
            for &i in r {
                let y = self.labels[i];
                let scale = if y { w } else { T::one() };
                grad[i] += inv_regions * (rest + scale * est_loss_grad(errors[i], y));
            }
        }
        grad
    }
}

impl<T: Scalar> CustomOp<T> for RegionObjective {
    fn name(&self) -> &'static str {
        "region_objective"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let errors = inputs[0];
        if errors.len() != self.labels.len() || self.regions.is_empty() {
            return Err(TensorError::Invalid {
                op: "region_objective",
                msg: format!("{} errors, {} labels, {} regions", errors.len(), self.labels.len(), self.regions.len()),
            });
        }
        Ok(Tensor::scalar(self.value(errors.data())))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>> {
        let g = grad_out[0];
        vec![self.gradient(inputs[0].data()).into_iter().map(|v| v * g).collect()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn cosine_error_landmarks() {
        let f = [1.0f64, 2.0, -0.5];
        assert!(cosine_error(&f, &f).abs() < 1e-15);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert!((cosine_error(&f, &neg) - 1.0).abs() < 1e-15);
        assert!((cosine_error(&[1.0f64, 0.0], &[0.0, 3.0]) - 0.5).abs() < 1e-15);
        assert_eq!(cosine_error(&[0.0, 0.0], &[1.0, 1.0]), 0.5);
    }

    #[test]
    fn est_loss_worked_values() {
        assert!((est_loss(0.5, true) - LN2).abs() < 1e-15);
        assert!((est_loss(0.9, false) - (-(0.1f64).ln())).abs() < 1e-12);
        assert!(est_loss(1.0, true) < 1e-6);
        assert!(est_loss(0.0, false) < 1e-6);
        assert!(est_loss(0.0f64, true).is_finite());
    }

    #[test]
    fn rest_loss_worked_values() {
        assert!((rest_loss(&[0.2, 0.4, 0.6], true) - (-(0.4f64).ln())).abs() < 1e-12);
        assert_eq!(rest_loss(&[0.3, 0.3, 0.3], false), est_loss(0.3, false));
        assert_eq!(rest_loss(&[0.7], true), est_loss(0.7, true));
    }

    #[test]
    fn combined_loss_worked_values() {
        let v = combined_loss(&[0.5, 0.5], &[false, false], 0.5);
        assert!((v - 2.5 * LN2).abs() < 1e-12);
        let e = [0.1, 0.8, 0.3];
        let y = [false, true, false];
        let plain: f64 = e.iter().zip(&y).map(|(&e, &y)| est_loss(e, y)).sum();
        assert_eq!(combined_loss(&e, &y, 0.0), plain);
        assert!(combined_loss(&[1.0, 1.0], &[true, true], 0.5) < 1e-5);
    }

    #[test]
    fn positive_weight_rules() {
        assert_eq!(positive_weight(5, 5), 1.0);
        assert_eq!(positive_weight(2, 8), 4.0);
        assert_eq!(positive_weight(0, 10), 1.0);
        assert_eq!(positive_weight(1, 1000), 100.0);
        assert_eq!(positive_weight(9, 1), 1.0);
    }

    #[test]
    fn est_loss_is_monotone_on_a_grid() {
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            assert!(est_loss(w[1], true) < est_loss(w[0], true));
            assert!(est_loss(w[1], false) > est_loss(w[0], false));
        }
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let regions = vec![vec![0, 1, 2], vec![1, 2, 3], vec![2, 3, 4]];
        let labels = vec![false, false, true, false, false];
        let obj = RegionObjective::new(regions, labels, 0.5);
        let errs = [0.2f64, 0.35, 0.6, 0.1, 0.45];
        let g = obj.gradient(&errs);
        for i in 0..errs.len() {
            let mut p = errs;
            let mut m = errs;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (obj.value(&p) - obj.value(&m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }
}
