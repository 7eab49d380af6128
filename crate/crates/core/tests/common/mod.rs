//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use driftfl::linalg::{dot, norm, Matrix};
use driftfl::rng::{self, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> Rng {
    rng::stream(seed, 0xACCE)
}

pub fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, gaussian(rng, rows * cols))
}

pub fn unit(rng: &mut Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, n);
        let l = norm(&v);
        if l > 1e-3 {
            return v.into_iter().map(|x| x / l).collect();
        }
    }
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + eps;
            let up = f(&probe);
            probe[j] = orig - eps;
            let down = f(&probe);
            probe[j] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `log Σ_c exp(z_c)` computed without the library softmax.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Summed cross-entropy `Σ_i −log softmax(φ h_i)_{y_i}` from first principles.
pub fn summed_ce(h: &Matrix, phi: &Matrix, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let z: Vec<f64> = phi.iter_rows().map(|w| dot(w, h.row(i))).collect();
            log_sum_exp(&z) - z[y]
        })
        .sum()
}

/// Mean cross-entropy of `softmax(scores)`.
pub fn mean_ce_of_scores(scores: &Matrix, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_sum_exp(scores.row(i)) - scores.get(i, y))
        .sum();
    total / labels.len() as f64
}

/// Random classification instance: `(h, φ, labels)` with the given sizes.
pub fn head_instance(rng: &mut Rng, classes: usize, dim: usize, batch: usize) -> (Matrix, Matrix, Vec<usize>) {
    let h = gaussian_matrix(rng, batch, dim);
    let phi = gaussian_matrix(rng, classes, dim);
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (h, phi, labels)
}

/// Plain heavy-ball loop written out independently of the library
/// optimizer: returns `(w_final − w_0, final buffer)`.
pub fn heavy_ball(grads: &[Vec<f64>], decay: f64, lr: f64) -> (Vec<f64>, Vec<f64>) {
    let n = grads[0].len();
    let mut m = vec![0.0; n];
    let mut disp = vec![0.0; n];
    for g in grads {
        for j in 0..n {
            m[j] = decay * m[j] + g[j];
            disp[j] -= lr * m[j];
        }
    }
    (disp, m)
}

/// Orthogonal projection of `h` onto span{a, b} by a least-squares solve of
/// the 2-column system `[a b] x ≈ h`.
pub fn lstsq_projection(h: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = h.len();
    let basis = nalgebra::DMatrix::from_fn(n, 2, |i, j| if j == 0 { a[i] } else { b[i] });
    let rhs = nalgebra::DVector::from_column_slice(h);
    let svd = basis.clone().svd(true, true);
    let x = svd.solve(&rhs, 1e-12).expect("svd solve");
    (basis * x).iter().copied().collect()
}
