//! Linear softmax head: logits, probabilities, cross-entropy and the
//! closed-form gradients with respect to the embeddings and the classifier.
//!
//! Gradients are in descent form (`∂L/∂·`) of the *summed* batch loss
//! `Σ_i −log p_{i,y_i}`; divide by the batch size for the mean loss.

use super::ModelError;
use crate::linalg::{dot, Matrix};

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// `z_c = ⟨φ_c, h⟩` for every class; `phi` is `C × d_h`.
pub fn logits(h: &[f64], phi: &Matrix) -> Result<Vec<f64>, ModelError> {
    if phi.cols() != h.len() {
        return Err(ModelError::DimensionMismatch {
            what: "embedding vs classifier row",
            expected: phi.cols(),
            found: h.len(),
        });
    }
    Ok(phi.iter_rows().map(|row| dot(row, h)).collect())
}

/// Logits for every row of `h`.
pub fn logits_batch(h: &Matrix, phi: &Matrix) -> Result<Matrix, ModelError> {
    let mut z = Matrix::zeros(h.rows(), phi.rows());
    for i in 0..h.rows() {
        let zi = logits(h.row(i), phi)?;
        z.row_mut(i).copy_from_slice(&zi);
    }
    Ok(z)
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        p.row_mut(i).copy_from_slice(&softmax(z.row(i)));
    }
    p
}

/// `∂p_j/∂z_c = p_j(δ_jc − p_c)`, row `j`, column `c`.
pub fn softmax_jacobian(p: &[f64]) -> Matrix {
    let c = p.len();
    let mut jac = Matrix::zeros(c, c);
    for j in 0..c {
        for k in 0..c {
            let delta = if j == k { 1.0 } else { 0.0 };
            jac.set(j, k, p[j] * (delta - p[k]));
        }
    }
    jac
}

/// Mean of `−log p_{i,y_i}` over the batch, with `p` clamped at
/// [`LOG_CLAMP`].
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(LOG_CLAMP).ln())
        .sum();
    total / labels.len() as f64
}

/// Per-sample residuals `r_{i,c} = I{y_i = c} − p_{i,c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResidual {
    residuals: Matrix,
}

impl BatchResidual {
    pub fn new(probs: &Matrix, labels: &[usize]) -> Result<Self, ModelError> {
        if probs.rows() != labels.len() {
            return Err(ModelError::DimensionMismatch {
                what: "labels vs probability rows",
                expected: probs.rows(),
                found: labels.len(),
            });
        }
        let mut residuals = Matrix::zeros(probs.rows(), probs.cols());
        for (i, &y) in labels.iter().enumerate() {
            if y >= probs.cols() {
                return Err(ModelError::LabelOutOfRange {
                    label: y,
                    classes: probs.cols(),
                });
            }
            for (c, r) in residuals.row_mut(i).iter_mut().enumerate() {
                let ind = if c == y { 1.0 } else { 0.0 };
                *r = ind - probs.get(i, c);
            }
        }
        Ok(Self { residuals })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.residuals
    }

    pub fn batch_size(&self) -> usize {
        self.residuals.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.residuals.cols()
    }

    /// `Σ_i r_{i,c}` per class: positive-sample mass minus predicted mass.
    pub fn class_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_classes()];
        for row in self.residuals.iter_rows() {
            for (s, r) in sums.iter_mut().zip(row) {
                *s += r;
            }
        }
        sums
    }
}

/// `∂L/∂h_i = Σ_c (p_{i,c} − I{y_i=c}) φ_c`, one row per sample.
pub fn grad_wrt_features(residual: &BatchResidual, phi: &Matrix) -> Result<Matrix, ModelError> {
    if phi.rows() != residual.num_classes() {
        return Err(ModelError::DimensionMismatch {
            what: "classifier rows vs classes",
            expected: residual.num_classes(),
            found: phi.rows(),
        });
    }
    let r = residual.matrix();
    let mut out = Matrix::zeros(r.rows(), phi.cols());
    for i in 0..r.rows() {
        let gi = out.row_mut(i);
        for (c, &ric) in r.row(i).iter().enumerate() {
            for (g, w) in gi.iter_mut().zip(phi.row(c)) {
                *g -= ric * w;
            }
        }
    }
    Ok(out)
}

/// `∂L/∂φ_c = Σ_i (p_{i,c} − I{y_i=c}) h_i`, one row per class.
pub fn grad_wrt_classifier(residual: &BatchResidual, h: &Matrix) -> Result<Matrix, ModelError> {
    if h.rows() != residual.batch_size() {
        return Err(ModelError::DimensionMismatch {
            what: "embedding rows vs batch",
            expected: residual.batch_size(),
            found: h.rows(),
        });
    }
    let r = residual.matrix();
    let mut out = Matrix::zeros(r.cols(), h.cols());
    for i in 0..r.rows() {
        let hi = h.row(i);
        for (c, &ric) in r.row(i).iter().enumerate() {
            for (g, x) in out.row_mut(c).iter_mut().zip(hi) {
                *g -= ric * x;
            }
        }
    }
    Ok(out)
}

/// Converts a descent-form classifier gradient to the residual-weighted form
/// `Σ_{y_i=c}(1 − p_{i,c}) h_i − Σ_{y_i≠c} p_{i,c} h_i`, which is its negation.
pub fn to_residual_form(descent: &Matrix) -> Matrix {
    let mut m = descent.clone();
    m.scale(-1.0);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logits_with_identity_rows() {
        let phi = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(logits(&[3.0, 4.0], &phi).unwrap(), vec![3.0, 4.0]);
        assert_eq!(logits(&[0.0, 0.0], &phi).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_symmetric_and_overflow_safe() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_edge_values() {
        let c = 4;
        let uniform = Matrix::from_rows(&[vec![0.25; c]]);
        assert_abs_diff_eq!(cross_entropy(&uniform, &[2]), (c as f64).ln(), epsilon = 1e-15);
        let sure = Matrix::from_rows(&[vec![0.0, 1.0]]);
        assert_eq!(cross_entropy(&sure, &[1]), 0.0);
        // clamp keeps a zero probability finite
        assert_abs_diff_eq!(cross_entropy(&sure, &[0]), -(LOG_CLAMP.ln()), epsilon = 1e-9);
    }

    #[test]
    fn residual_rows_sum_to_zero_and_have_class_signs() {
        let probs = Matrix::from_rows(&[softmax(&[0.3, -1.0, 2.0]), softmax(&[1.0, 1.0, 0.0])]);
        let res = BatchResidual::new(&probs, &[0, 2]).unwrap();
        for (i, row) in res.matrix().iter_rows().enumerate() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
            let y = [0, 2][i];
            for (c, &r) in row.iter().enumerate() {
                if c == y {
                    assert!(r > 0.0);
                } else {
                    assert!(r < 0.0);
                }
            }
        }
    }

    #[test]
    fn feature_gradient_two_class_example() {
        // h = (1, 1) with identity rows gives p = (0.5, 0.5)
        let phi = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let h = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let p = softmax_rows(&logits_batch(&h, &phi).unwrap());
        let res = BatchResidual::new(&p, &[0]).unwrap();
        let g = grad_wrt_features(&res, &phi).unwrap();
        assert_eq!(g.row(0), &[-0.5, 0.5]);
    }

    #[test]
    fn perfect_prediction_gives_zero_gradients() {
        let probs = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let res = BatchResidual::new(&probs, &[0, 1]).unwrap();
        let phi = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let h = Matrix::from_rows(&[vec![0.5, 0.5], vec![-1.0, 2.0]]);
        assert!(grad_wrt_features(&res, &phi)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        assert!(grad_wrt_classifier(&res, &h)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn residual_form_flips_sign() {
        let probs = Matrix::from_rows(&[vec![0.2, 0.8]]);
        let res = BatchResidual::new(&probs, &[0]).unwrap();
        let h = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let g = grad_wrt_classifier(&res, &h).unwrap();
        assert_abs_diff_eq!(g.row(0)[0], -0.8, epsilon = 1e-15);
        let r = to_residual_form(&g);
        assert_abs_diff_eq!(r.row(0)[1], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(r.row(1)[0], -0.8, epsilon = 1e-15);
    }
}
