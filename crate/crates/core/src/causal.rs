//! Drift-aware scoring head.
//!
//! Training scores average a per-class score over the calibrated classifier
//! rows seen so far in the round:
//!
//! ```text
//! p̂_c = τ/M Σ_m R_c^(m) · [ h/‖h‖ − α cos(h, d̂_G,c) d̂_G,c − β cos(h, d̂_k,c) d̂_k,c ]
//! R_c = φ_c / (‖φ_c‖ + γ)
//! ```
//!
//! Inference keeps only the global direction and the final classifier.
//!
//! Gradients use a stop-gradient convention: the drift directions, the
//! indirect (direction) terms and every stored row except the live one are
//! constants. The embedding receives gradient through the direct term of
//! every stored row and the classifier through the live row only.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::{decompose, DriftDirections};
use crate::linalg::{argmax, dot, norm, Matrix};
use crate::model::{softmax, LOG_CLAMP};

/// Norms below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CausalError {
    #[error("{name} = {value} violates {bound}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        bound: &'static str,
    },
    #[error("training scores need at least one snapshot")]
    EmptyRing,
    #[error("{what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            tau: 16.0,
            gamma: 0.01,
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<(), CausalError> {
        let bad = |name, value, bound| Err(CausalError::InvalidParam { name, value, bound });
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", self.tau, "tau > 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", self.gamma, "gamma >= 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", self.alpha, "0 <= alpha <= 1");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", self.beta, "0 <= beta <= 1");
        }
        Ok(())
    }
}

/// How calibrated scores become a probability for the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Cross-entropy of `softmax(p̂)`.
    #[default]
    Softmax,
    /// Cross-entropy of `p̂` clamped into `[1e-12, 1]`.
    Clamp,
}

/// `φ_c / (‖φ_c‖ + γ)`, or a zero row when the denominator is below
/// [`NORM_FLOOR`].
pub fn parameter_calibration(phi_c: &[f64], gamma: f64) -> Vec<f64> {
    let denom = norm(phi_c) + gamma;
    if denom < NORM_FLOOR {
        return vec![0.0; phi_c.len()];
    }
    phi_c.iter().map(|v| v / denom).collect()
}

/// [`parameter_calibration`] applied to every row.
pub fn calibrate_rows(phi: &Matrix, gamma: f64) -> Matrix {
    let rows: Vec<Vec<f64>> = phi.iter_rows().map(|r| parameter_calibration(r, gamma)).collect();
    let mut out = Matrix::zeros(phi.rows(), phi.cols());
    for (c, r) in rows.iter().enumerate() {
        out.row_mut(c).copy_from_slice(r);
    }
    out
}

/// `h_inv / ‖h‖`, zero when `‖h‖` is below [`NORM_FLOOR`].
pub fn feature_calibration(h: &[f64], global: Option<&[f64]>, local: Option<&[f64]>) -> Vec<f64> {
    let n = norm(h);
    if n < NORM_FLOOR {
        return vec![0.0; h.len()];
    }
    let d = decompose(h, global, local);
    d.h_inv.into_iter().map(|v| v / n).collect()
}

/// `R · [ĥ − α cos(h, d̂_G) d̂_G − β cos(h, d̂_k) d̂_k]` for one class and one
/// calibrated row. Invalid directions contribute nothing.
pub fn snapshot_score(
    h: &[f64],
    row: &[f64],
    global: Option<&[f64]>,
    local: Option<&[f64]>,
    alpha: f64,
    beta: f64,
) -> f64 {
    let n = norm(h);
    if n < NORM_FLOOR {
        return 0.0;
    }
    let mut score = dot(row, h) / n;
    for (dir, weight) in [(global, alpha), (local, beta)] {
        if let Some(d) = dir {
            score -= weight * (dot(h, d) / n) * dot(row, d);
        }
    }
    score
}

/// Calibrated classifier rows of the current round, oldest first.
#[derive(Debug, Clone)]
pub struct SnapshotRing {
    capacity: usize,
    rows: VecDeque<Matrix>,
}

impl SnapshotRing {
    /// A ring of capacity 0 is bumped to 1 so the live row always fits.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            rows: VecDeque::with_capacity(capacity),
        }
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Appends a snapshot, evicting the oldest when full.
    pub fn push(&mut self, calibrated: Matrix) {
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back(calibrated);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.rows.iter()
    }

    /// The most recent snapshot.
    pub fn live(&self) -> Option<&Matrix> {
        self.rows.back()
    }
}

/// Per-class training scores of one embedding.
pub fn train_scores(
    h: &[f64],
    ring: &SnapshotRing,
    dirs: &DriftDirections,
    params: &CalibrationParams,
) -> Result<Vec<f64>, CausalError> {
    let first = ring.live().ok_or(CausalError::EmptyRing)?;
    let classes = first.rows();
    if dirs.num_classes() != classes {
        return Err(CausalError::ShapeMismatch {
            what: "drift direction classes",
            expected: classes,
            found: dirs.num_classes(),
        });
    }
    let scale = params.tau / ring.len() as f64;
    let mut out = vec![0.0; classes];
    for snap in ring.iter() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += snapshot_score(h, snap.row(c), dirs.global(c), dirs.local(c), params.alpha, params.beta);
        }
    }
    out.iter_mut().for_each(|o| *o *= scale);
    Ok(out)
}

/// Deconfounded inference scores:
/// `τ [ R_c·h/‖h‖ − α cos(h, d̂_G,c) R_c·d̂_G,c ]` with `R_c` the calibrated
/// row of the final classifier.
pub fn infer_scores(
    h: &[f64],
    phi: &Matrix,
    global: &[Option<Vec<f64>>],
    tau: f64,
    gamma: f64,
    alpha: f64,
) -> Vec<f64> {
    let n = norm(h);
    (0..phi.rows())
        .map(|c| {
            if n < NORM_FLOOR {
                return 0.0;
            }
            let r = parameter_calibration(phi.row(c), gamma);
            let mut s = dot(&r, h) / n;
            if let Some(Some(d)) = global.get(c) {
                s -= alpha * (dot(h, d) / n) * dot(&r, d);
            }
            tau * s
        })
        .collect()
}

/// Index of the largest score, lowest index on ties.
pub fn predict(scores: &[f64]) -> usize {
    argmax(scores)
}

/// Frozen end-of-training head.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceHead {
    pub phi: Matrix,
    pub global: Vec<Option<Vec<f64>>>,
    pub params: CalibrationParams,
}

impl InferenceHead {
    pub fn scores(&self, h: &[f64]) -> Vec<f64> {
        infer_scores(
            h,
            &self.phi,
            &self.global,
            self.params.tau,
            self.params.gamma,
            self.params.alpha,
        )
    }

    pub fn predict(&self, h: &[f64]) -> usize {
        predict(&self.scores(h))
    }
}

/// Training scores for a batch (one row per sample).
pub fn train_scores_batch(
    h: &Matrix,
    ring: &SnapshotRing,
    dirs: &DriftDirections,
    params: &CalibrationParams,
) -> Result<Matrix, CausalError> {
    let classes = ring.live().ok_or(CausalError::EmptyRing)?.rows();
    let mut out = Matrix::zeros(h.rows(), classes);
    for i in 0..h.rows() {
        let s = train_scores(h.row(i), ring, dirs, params)?;
        out.row_mut(i).copy_from_slice(&s);
    }
    Ok(out)
}

/// Mean calibration loss over the batch and its gradient with respect to the
/// scores.
pub fn calibration_loss(scores: &Matrix, labels: &[usize], mode: LossMode) -> (f64, Matrix) {
    let n = labels.len();
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    if n == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        match mode {
            LossMode::Softmax => {
                let p = softmax(scores.row(i));
                loss -= p[y].max(LOG_CLAMP).ln();
                for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
                    let ind = if c == y { 1.0 } else { 0.0 };
                    *g = (p[c] - ind) * inv;
                }
            }
            LossMode::Clamp => {
                let s = scores.get(i, y);
                let p = s.clamp(LOG_CLAMP, 1.0);
                loss -= p.ln();
                if s > LOG_CLAMP && s < 1.0 {
                    grad.set(i, y, -inv / s);
                }
            }
        }
    }
    (loss * inv, grad)
}

/// `∂L/∂h` (one row per sample) and `∂L/∂φ` (live row only) given
/// `∂L/∂p̂` under the stop-gradient convention described in the module docs.
pub fn calibration_backward(
    h: &Matrix,
    phi: &Matrix,
    ring: &SnapshotRing,
    dscores: &Matrix,
    params: &CalibrationParams,
) -> Result<(Matrix, Matrix), CausalError> {
    if ring.is_empty() {
        return Err(CausalError::EmptyRing);
    }
    let classes = phi.rows();
    let dim = phi.cols();
    let scale = params.tau / ring.len() as f64;

    // a_c = Σ_m R_c^(m)
    let mut summed = Matrix::zeros(classes, dim);
    for snap in ring.iter() {
        for (a, r) in summed.as_mut_slice().iter_mut().zip(snap.as_slice()) {
            *a += r;
        }
    }

    let mut dh = Matrix::zeros(h.rows(), dim);
    // v_c = Σ_i ∂L/∂p̂_ic · ĥ_i
    let mut v = Matrix::zeros(classes, dim);
    for i in 0..h.rows() {
        let hi = h.row(i);
        let n = norm(hi);
        if n < NORM_FLOOR {
            continue;
        }
        let unit: Vec<f64> = hi.iter().map(|x| x / n).collect();
        let dhi = dh.row_mut(i);
        for c in 0..classes {
            let g = dscores.get(i, c) * scale;
            if g == 0.0 {
                continue;
            }
            let a = summed.row(c);
            let proj = dot(a, &unit);
            for ((d, aj), uj) in dhi.iter_mut().zip(a).zip(&unit) {
                *d += g * (aj - proj * uj) / n;
            }
            for (vj, uj) in v.row_mut(c).iter_mut().zip(&unit) {
                *vj += g * uj;
            }
        }
    }

    // ∂(R·u)/∂φ = u/(‖φ‖+γ) − (φ·u) φ / (‖φ‖ (‖φ‖+γ)²)
    let mut dphi = Matrix::zeros(classes, dim);
    for c in 0..classes {
        let row = phi.row(c);
        let n = norm(row);
        if n < NORM_FLOOR {
            continue;
        }
        let denom = n + params.gamma;
        let vc = v.row(c);
        let coupling = dot(row, vc) / (n * denom * denom);
        for ((d, vj), wj) in dphi.row_mut(c).iter_mut().zip(vc).zip(row) {
            *d = vj / denom - coupling * wj;
        }
    }
    Ok((dh, dphi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ring_of(rows: Vec<Matrix>, capacity: usize) -> SnapshotRing {
        let mut r = SnapshotRing::new(capacity);
        for m in rows {
            r.push(m);
        }
        r
    }

    #[test]
    fn parameter_calibration_cases() {
        assert_eq!(parameter_calibration(&[3.0, 4.0], 0.0), vec![0.6, 0.8]);
        assert_eq!(parameter_calibration(&[0.0, 0.0], 0.0), vec![0.0, 0.0]);
        let big = parameter_calibration(&[3.0, 4.0], 1e12);
        assert!(norm(&big) < 1e-11);
        let r = parameter_calibration(&[1.0, -2.0, 0.5], 0.1);
        let n = norm(&[1.0, -2.0, 0.5]);
        assert_abs_diff_eq!(norm(&r), n / (n + 0.1), epsilon = 1e-15);
    }

    #[test]
    fn feature_calibration_fallbacks() {
        let h = [3.0, 4.0];
        assert_eq!(feature_calibration(&h, None, None), vec![0.6, 0.8]);
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        assert_eq!(feature_calibration(&h, Some(&e1), Some(&e2)), vec![0.0, 0.0]);
        assert_eq!(feature_calibration(&[0.0, 0.0], None, None), vec![0.0, 0.0]);
    }

    #[test]
    fn snapshot_score_reduces_to_cosine() {
        let h = [1.0, 2.0, -1.0];
        let phi = [0.5, -0.5, 2.0];
        let row = parameter_calibration(&phi, 0.0);
        let g = [1.0, 0.0, 0.0];
        let s = snapshot_score(&h, &row, Some(&g), None, 0.0, 0.0);
        let cos = dot(&h, &phi) / (norm(&h) * norm(&phi));
        assert_abs_diff_eq!(s, cos, epsilon = 1e-15);
    }

    #[test]
    fn snapshot_score_ignores_weights_when_orthogonal() {
        let h = [0.0, 0.0, 1.0];
        let row = [0.2, 0.3, 0.4];
        let g = [1.0, 0.0, 0.0];
        let k = [0.0, 1.0, 0.0];
        let a = snapshot_score(&h, &row, Some(&g), Some(&k), 0.0, 0.0);
        let b = snapshot_score(&h, &row, Some(&g), Some(&k), 1.0, 0.7);
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_score_matches_feature_calibration_for_orthogonal_pair() {
        let h = [0.3, -1.2, 0.8, 2.0];
        let row = [0.1, 0.4, -0.3, 0.2];
        let s = (0.5f64).sqrt();
        let g = [s, s, 0.0, 0.0];
        let k = [0.0, 0.0, s, -s];
        let direct = snapshot_score(&h, &row, Some(&g), Some(&k), 1.0, 1.0);
        let via = dot(&row, &feature_calibration(&h, Some(&g), Some(&k)));
        assert_abs_diff_eq!(direct, via, epsilon = 1e-14);
    }

    #[test]
    fn ring_evicts_oldest_and_rejects_empty() {
        let dirs = DriftDirections::invalid(1, 1);
        let params = CalibrationParams::default();
        let empty = SnapshotRing::new(2);
        assert_eq!(
            train_scores(&[1.0], &empty, &dirs, &params),
            Err(CausalError::EmptyRing)
        );
        let ring = ring_of(
            vec![
                Matrix::from_rows(&[vec![1.0]]),
                Matrix::from_rows(&[vec![2.0]]),
                Matrix::from_rows(&[vec![3.0]]),
            ],
            2,
        );
        assert_eq!(ring.len(), 2);
        assert_eq!(ring.iter().next().unwrap().get(0, 0), 2.0);
        assert_eq!(ring.live().unwrap().get(0, 0), 3.0);
    }

    #[test]
    fn train_scores_average_over_snapshots() {
        let dirs = DriftDirections::invalid(2, 2);
        let params = CalibrationParams {
            tau: 2.0,
            ..Default::default()
        };
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let single = train_scores(&[1.0, 1.0], &ring_of(vec![a.clone()], 5), &dirs, &params).unwrap();
        let repeated = train_scores(&[1.0, 1.0], &ring_of(vec![a.clone(); 4], 5), &dirs, &params).unwrap();
        for (x, y) in single.iter().zip(&repeated) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(single[0], 2.0 * s, epsilon = 1e-15);
    }

    #[test]
    fn inference_reductions() {
        let phi = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 1.0]]);
        let h = [0.0, 1.0, 1.0];
        let g = vec![Some(vec![1.0, 0.0, 0.0]), Some(vec![1.0, 0.0, 0.0])];
        let none = vec![None, None];
        let with = infer_scores(&h, &phi, &g, 3.0, 0.1, 0.8);
        let without = infer_scores(&h, &phi, &none, 3.0, 0.1, 0.8);
        let alpha0 = infer_scores(&h, &phi, &g, 3.0, 0.1, 0.0);
        assert_eq!(with, without);
        assert_eq!(alpha0, without);
    }

    #[test]
    fn predict_ties_and_scale() {
        assert_eq!(predict(&[0.1, 0.9]), 1);
        assert_eq!(predict(&[0.5, 0.5, 0.5]), 0);
        let s = [0.3, -1.0, 2.5, 2.4];
        let scaled: Vec<f64> = s.iter().map(|v| v * 17.0).collect();
        assert_eq!(predict(&s), predict(&scaled));
    }

    #[test]
    fn loss_vanishes_with_large_margin() {
        let scores = Matrix::from_rows(&[vec![1e3, 0.0]]);
        let (loss, _) = calibration_loss(&scores, &[0], LossMode::Softmax);
        assert!(loss < 1e-12);
    }

    #[test]
    fn clamp_loss_gradient_only_inside_range() {
        let scores = Matrix::from_rows(&[vec![0.5, 0.2], vec![1.5, 0.1]]);
        let (loss, g) = calibration_loss(&scores, &[0, 0], LossMode::Clamp);
        assert_abs_diff_eq!(loss, -(0.5f64.ln()) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.get(0, 0), -1.0, epsilon = 1e-15);
        assert_eq!(g.get(1, 0), 0.0);
    }

    #[test]
    fn params_validation_names_field() {
        let p = CalibrationParams {
            tau: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            p.validate(),
            Err(CausalError::InvalidParam { name: "tau", .. })
        ));
        let p = CalibrationParams {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            p.validate(),
            Err(CausalError::InvalidParam { name: "alpha", .. })
        ));
    }
}
