//! Scaled cosine-similarity head `s_c = τ·cos(h, φ_c)`, used by the cosine
//! classifier baseline.

use super::ModelError;
use crate::linalg::{dot, norm, Matrix};

const FLOOR: f64 = 1e-12;

/// `τ·cos(h_i, φ_c)` for every sample and class; zero where either norm is
/// below `1e-12`.
pub fn cosine_scores(h: &Matrix, phi: &Matrix, tau: f64) -> Result<Matrix, ModelError> {
    if h.cols() != phi.cols() {
        return Err(ModelError::DimensionMismatch {
            what: "embedding vs classifier row",
            expected: phi.cols(),
            found: h.cols(),
        });
    }
    let norms: Vec<f64> = phi.iter_rows().map(norm).collect();
    let mut out = Matrix::zeros(h.rows(), phi.rows());
    for i in 0..h.rows() {
        let hi = h.row(i);
        let nh = norm(hi);
        for (c, s) in out.row_mut(i).iter_mut().enumerate() {
            let nw = norms[c];
            *s = if nh < FLOOR || nw < FLOOR {
                0.0
            } else {
                tau * dot(hi, phi.row(c)) / (nh * nw)
            };
        }
    }
    Ok(out)
}

/// Chain rule through [`cosine_scores`]: returns `(∂L/∂h, ∂L/∂φ)` given
/// `∂L/∂s`.
pub fn cosine_backward(h: &Matrix, phi: &Matrix, dscores: &Matrix, tau: f64) -> (Matrix, Matrix) {
    let mut dh = Matrix::zeros(h.rows(), h.cols());
    let mut dphi = Matrix::zeros(phi.rows(), phi.cols());
    let norms: Vec<f64> = phi.iter_rows().map(norm).collect();
    for i in 0..h.rows() {
        let hi = h.row(i);
        let nh = norm(hi);
        if nh < FLOOR {
            continue;
        }
        for (c, &nw) in norms.iter().enumerate() {
            let g = dscores.get(i, c);
            if nw < FLOOR || g == 0.0 {
                continue;
            }
            let w = phi.row(c);
            let cos = dot(hi, w) / (nh * nw);
            // ∂cos/∂h = w/(‖h‖‖w‖) − cos·h/‖h‖², symmetric in the roles of h and w
            for ((d, wj), hj) in dh.row_mut(i).iter_mut().zip(w).zip(hi) {
                *d += tau * g * (wj / (nh * nw) - cos * hj / (nh * nh));
            }
            for ((d, hj), wj) in dphi.row_mut(c).iter_mut().zip(hi).zip(w) {
                *d += tau * g * (hj / (nh * nw) - cos * wj / (nw * nw));
            }
        }
    }
    (dh, dphi)
}
