//! Drift statistics and the invariant/drift split of embeddings.
//!
//! Per class `c` two accumulators are tracked:
//!
//! * global: `λ_G,c = −(Σ_i r_{i,c}) · φ_c^(r,0)`, built from the classifier the
//!   round started with;
//! * local: `λ_k,c = (Σ_i r_{i,c}) · η · (ν_c^(1) + … + ν_c^(e))`, built from the
//!   classifier block of the local momentum buffers.
//!
//! Their unit directions span the subspace that [`decompose`] removes from an
//! embedding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, Matrix};
use crate::model::BatchResidual;

/// Accumulators with a smaller norm yield no direction.
pub const DIRECTION_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum DriftError {
    #[error("global drift update before the round's classifier snapshot was captured")]
    MissingSnapshot,
    #[error("momentum partial sums have length {found}, expected {expected}")]
    MissingMomentum { expected: usize, found: usize },
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
}

/// How per-sample residuals are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualReduction {
    #[default]
    Sum,
    Mean,
}

impl ResidualReduction {
    fn class_sums(self, residual: &BatchResidual) -> Vec<f64> {
        let mut sums = residual.class_sums();
        if self == ResidualReduction::Mean && residual.batch_size() > 0 {
            let n = residual.batch_size() as f64;
            sums.iter_mut().for_each(|s| *s /= n);
        }
        sums
    }
}

fn check_shape(m: &Matrix, rows: usize, cols: usize) -> Result<(), DriftError> {
    if m.rows() != rows || m.cols() != cols {
        return Err(DriftError::ShapeMismatch {
            expected_rows: rows,
            expected_cols: cols,
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(())
}

/// One batch's contribution to `λ_G`: row `c` is `−(Σ_i r_{i,c}) φ_c^(r,0)`.
pub fn lambda_global_increment(
    residual: &BatchResidual,
    phi_round_init: &Matrix,
    reduction: ResidualReduction,
) -> Result<Matrix, DriftError> {
    check_shape(phi_round_init, residual.num_classes(), phi_round_init.cols())?;
    let sums = reduction.class_sums(residual);
    let mut out = Matrix::zeros(phi_round_init.rows(), phi_round_init.cols());
    for (c, s) in sums.iter().enumerate() {
        for (o, w) in out.row_mut(c).iter_mut().zip(phi_round_init.row(c)) {
            *o = -s * w;
        }
    }
    Ok(out)
}

/// `λ_k`: row `c` is `(Σ_i r_{i,c}) · η · S_c` where `S` is the classifier
/// block of the momentum partial sums (`C × d_h`, row-major).
pub fn lambda_local(
    residual: &BatchResidual,
    partial_sums: &[f64],
    dim: usize,
    lr: f64,
    reduction: ResidualReduction,
) -> Result<Matrix, DriftError> {
    let classes = residual.num_classes();
    if partial_sums.len() != classes * dim {
        return Err(DriftError::MissingMomentum {
            expected: classes * dim,
            found: partial_sums.len(),
        });
    }
    let sums = reduction.class_sums(residual);
    let mut out = Matrix::zeros(classes, dim);
    for (c, s) in sums.iter().enumerate() {
        let src = &partial_sums[c * dim..(c + 1) * dim];
        for (o, v) in out.row_mut(c).iter_mut().zip(src) {
            *o = s * lr * v;
        }
    }
    Ok(out)
}

/// `λ/‖λ‖`, or `None` when `‖λ‖` is below [`DIRECTION_FLOOR`].
pub fn normalize(lambda: &[f64]) -> Option<Vec<f64>> {
    let n = norm(lambda);
    if !n.is_finite() || n < DIRECTION_FLOOR {
        return None;
    }
    Some(lambda.iter().map(|v| v / n).collect())
}

/// Running drift accumulators of one client (or of the server for `λ_G`).
#[derive(Debug, Clone)]
pub struct DriftAccumulators {
    global: Matrix,
    local: Matrix,
    phi_round_init: Option<Matrix>,
    reduction: ResidualReduction,
    round: usize,
    batch: usize,
}

impl DriftAccumulators {
    pub fn new(classes: usize, dim: usize, reduction: ResidualReduction) -> Self {
        Self {
            global: Matrix::zeros(classes, dim),
            local: Matrix::zeros(classes, dim),
            phi_round_init: None,
            reduction,
            round: 0,
            batch: 0,
        }
    }

    /// Captures the round-initial classifier and seeds `λ_G` with `carry`
    /// (zeros when `None`). `λ_k` restarts at zero.
    pub fn begin_round(
        &mut self,
        round: usize,
        phi_round_init: Matrix,
        carry: Option<&Matrix>,
    ) -> Result<(), DriftError> {
        check_shape(&phi_round_init, self.global.rows(), self.global.cols())?;
        match carry {
            Some(c) => {
                check_shape(c, self.global.rows(), self.global.cols())?;
                self.global = c.clone();
            }
            None => self.global = Matrix::zeros(self.global.rows(), self.global.cols()),
        }
        self.local = Matrix::zeros(self.local.rows(), self.local.cols());
        self.phi_round_init = Some(phi_round_init);
        self.round = round;
        self.batch = 0;
        Ok(())
    }

    /// Adds this batch's term to `λ_G` and returns the increment.
    pub fn update_global(&mut self, residual: &BatchResidual) -> Result<Matrix, DriftError> {
        let phi0 = self.phi_round_init.as_ref().ok_or(DriftError::MissingSnapshot)?;
        let inc = lambda_global_increment(residual, phi0, self.reduction)?;
        for (g, d) in self.global.as_mut_slice().iter_mut().zip(inc.as_slice()) {
            *g += d;
        }
        self.batch += 1;
        Ok(inc)
    }

    /// Recomputes `λ_k` from this batch's residuals and the momentum partial
    /// sums after its step.
    pub fn update_local(&mut self, residual: &BatchResidual, partial_sums: &[f64], lr: f64) -> Result<(), DriftError> {
        self.local = lambda_local(residual, partial_sums, self.local.cols(), lr, self.reduction)?;
        Ok(())
    }

    pub fn global(&self) -> &Matrix {
        &self.global
    }

    pub fn local(&self) -> &Matrix {
        &self.local
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn directions(&self) -> DriftDirections {
        DriftDirections::from_accumulators(&self.global, Some(&self.local))
    }
}

/// Unit drift directions per class; `None` marks an invalid direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDirections {
    global: Vec<Option<Vec<f64>>>,
    local: Vec<Option<Vec<f64>>>,
    dim: usize,
}

impl DriftDirections {
    pub fn invalid(classes: usize, dim: usize) -> Self {
        Self {
            global: vec![None; classes],
            local: vec![None; classes],
            dim,
        }
    }

    pub fn new(global: Vec<Option<Vec<f64>>>, local: Vec<Option<Vec<f64>>>, dim: usize) -> Self {
        assert_eq!(global.len(), local.len(), "class count mismatch");
        Self { global, local, dim }
    }

    pub fn from_accumulators(global: &Matrix, local: Option<&Matrix>) -> Self {
        let g = global.iter_rows().map(normalize).collect::<Vec<_>>();
        let l = match local {
            Some(m) => m.iter_rows().map(normalize).collect(),
            None => vec![None; g.len()],
        };
        Self {
            global: g,
            local: l,
            dim: global.cols(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.global.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn global(&self, c: usize) -> Option<&[f64]> {
        self.global[c].as_deref()
    }

    pub fn local(&self, c: usize) -> Option<&[f64]> {
        self.local[c].as_deref()
    }

    /// Every class's global direction, the only drift state inference reads.
    pub fn global_all(&self) -> &[Option<Vec<f64>>] {
        &self.global
    }

    /// Same global directions with every local direction dropped.
    pub fn global_only(&self) -> Self {
        Self {
            global: self.global.clone(),
            local: vec![None; self.global.len()],
            dim: self.dim,
        }
    }

    pub fn decompose(&self, h: &[f64], c: usize) -> Decomposition {
        decompose(h, self.global(c), self.local(c))
    }
}

/// `h = h_inv + d_G + d_k` with `h_inv` orthogonal to both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub h_inv: Vec<f64>,
    pub d_global: Vec<f64>,
    pub d_local: Vec<f64>,
}

/// Projects `h` onto the span of the (unit) drift directions.
///
/// The pair is Gram–Schmidt orthonormalized with the global direction first,
/// so `d_global = ⟨h, d̂_G⟩ d̂_G` exactly and `d_local` is the projection on
/// the part of `d̂_k` orthogonal to `d̂_G`. For orthogonal directions this is
/// the plain pair of projections.
pub fn decompose(h: &[f64], global: Option<&[f64]>, local: Option<&[f64]>) -> Decomposition {
    let zeros = || vec![0.0; h.len()];
    let d_global = match global {
        Some(g) => {
            let a = dot(h, g);
            g.iter().map(|v| a * v).collect()
        }
        None => zeros(),
    };
    let d_local = match local {
        Some(k) => {
            let mut u = k.to_vec();
            if let Some(g) = global {
                let overlap = dot(k, g);
                for (ui, gi) in u.iter_mut().zip(g) {
                    *ui -= overlap * gi;
                }
            }
            let n = norm(&u);
            if n >= DIRECTION_FLOOR {
                u.iter_mut().for_each(|v| *v /= n);
                let a = dot(h, &u);
                u.iter().map(|v| a * v).collect()
            } else {
                zeros()
            }
        }
        None => zeros(),
    };
    let h_inv = h
        .iter()
        .zip(&d_global)
        .zip(&d_local)
        .map(|((x, g), k)| x - g - k)
        .collect();
    Decomposition {
        h_inv,
        d_global,
        d_local,
    }
}
