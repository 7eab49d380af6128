mod common;

use common::*;
use driftfl::causal::{
    calibrate_rows, calibration_backward, calibration_loss, parameter_calibration, train_scores_batch,
    CalibrationParams, LossMode, SnapshotRing,
};
use driftfl::drift::DriftDirections;
use driftfl::linalg::{dot, norm, relative_error, Matrix};
use driftfl::model::*;
use rand::Rng as _;

#[test]
fn feature_and_classifier_gradients_match_finite_differences() {
    let mut r = rng(11);
    for _ in 0..50 {
        let classes = r.random_range(2..=8);
        let dim = r.random_range(1..=16);
        let batch = r.random_range(1..=32);
        let (h, phi, labels) = head_instance(&mut r, classes, dim, batch);
        let probs = softmax_rows(&logits_batch(&h, &phi).unwrap());
        let res = BatchResidual::new(&probs, &labels).unwrap();

        let gh = grad_wrt_features(&res, &phi).unwrap();
        let fd_h = fd_gradient(
            |x| summed_ce(&Matrix::from_vec(batch, dim, x.to_vec()), &phi, &labels),
            h.as_slice(),
            1e-5,
        );
        assert!(relative_error(gh.as_slice(), &fd_h, 1e-6) < 1e-6);

        let gphi = grad_wrt_classifier(&res, &h).unwrap();
        let fd_phi = fd_gradient(
            |x| summed_ce(&h, &Matrix::from_vec(classes, dim, x.to_vec()), &labels),
            phi.as_slice(),
            1e-5,
        );
        assert!(relative_error(gphi.as_slice(), &fd_phi, 1e-6) < 1e-6);
        // the residual form is the ascent direction
        let neg: Vec<f64> = fd_phi.iter().map(|v| -v).collect();
        assert!(relative_error(to_residual_form(&gphi).as_slice(), &neg, 1e-6) < 1e-6);
    }
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut r = rng(12);
    for _ in 0..50 {
        let c = r.random_range(2..=8);
        let z = gaussian(&mut r, c);
        let jac = softmax_jacobian(&softmax(&z));
        for j in 0..c {
            let fd = fd_gradient(|x| softmax(x)[j], &z, 1e-6);
            assert!(relative_error(jac.row(j), &fd, 1e-8) < 1e-6);
        }
    }
}

#[test]
fn full_network_backprop_matches_finite_differences() {
    let mut r = rng(13);
    for activation in [Activation::Tanh, Activation::Identity, Activation::Relu] {
        let shape = ModelShape {
            input_dim: 4,
            layers: vec![LayerSpec { width: 6, activation }, LayerSpec { width: 5, activation }],
            num_classes: 3,
        };
        let params = ModelParams::init(shape.clone(), &mut r);
        let x = gaussian_matrix(&mut r, 7, 4);
        let labels: Vec<usize> = (0..7).map(|i| i % 3).collect();

        let loss = |flat: &[f64]| {
            let p = ModelParams::from_flat(shape.clone(), flat.to_vec()).unwrap();
            let (h, _) = forward_batch(&x, &p).unwrap();
            summed_ce(&h, &p.classifier_matrix(), &labels)
        };

        let (h, cache) = forward_batch(&x, &params).unwrap();
        let phi = params.classifier_matrix();
        let res = BatchResidual::new(&softmax_rows(&logits_batch(&h, &phi).unwrap()), &labels).unwrap();
        let mut grad = ModelParams::zeros_like(&params);
        grad.set_classifier(&grad_wrt_classifier(&res, &h).unwrap()).unwrap();
        backprop_extractor(&grad_wrt_features(&res, &phi).unwrap(), &params, &cache, &mut grad).unwrap();

        let fd = fd_gradient(loss, params.as_slice(), 1e-6);
        // the ReLU kink is measure-zero for Gaussian inputs
        assert!(
            relative_error(grad.as_slice(), &fd, 1e-6) < 1e-5,
            "{activation:?}: {}",
            relative_error(grad.as_slice(), &fd, 1e-6)
        );
    }
}

#[test]
fn cosine_head_gradients_match_finite_differences() {
    let mut r = rng(14);
    let (h, phi, labels) = head_instance(&mut r, 4, 5, 6);
    let tau = 7.0;
    let n = labels.len() as f64;
    let loss = |h: &Matrix, phi: &Matrix| mean_ce_of_scores(&cosine_scores(h, phi, tau).unwrap(), &labels);
    let probs = softmax_rows(&cosine_scores(&h, &phi, tau).unwrap());
    let mut ds = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        ds.set(i, y, ds.get(i, y) - 1.0);
    }
    ds.scale(1.0 / n);
    let (dh, dphi) = cosine_backward(&h, &phi, &ds, tau);
    let fd_h = fd_gradient(|x| loss(&Matrix::from_vec(6, 5, x.to_vec()), &phi), h.as_slice(), 1e-6);
    let fd_phi = fd_gradient(|x| loss(&h, &Matrix::from_vec(4, 5, x.to_vec())), phi.as_slice(), 1e-6);
    assert!(relative_error(dh.as_slice(), &fd_h, 1e-8) < 1e-6);
    assert!(relative_error(dphi.as_slice(), &fd_phi, 1e-8) < 1e-6);
}

/// Calibrated scores rebuilt from scratch with the stop-gradient terms frozen
/// at the base point: only the direct terms of the stored rows (live row as a
/// function of φ) vary.
fn frozen_calibration_loss(
    h: &Matrix,
    phi: &Matrix,
    past: &[Matrix],
    offsets: &Matrix,
    params: &CalibrationParams,
    labels: &[usize],
) -> f64 {
    let m = (past.len() + 1) as f64;
    let mut scores = Matrix::zeros(h.rows(), phi.rows());
    for i in 0..h.rows() {
        let hi = h.row(i);
        let nh = norm(hi);
        for c in 0..phi.rows() {
            let live = parameter_calibration(phi.row(c), params.gamma);
            let mut direct = dot(&live, hi) / nh;
            for p in past {
                direct += dot(p.row(c), hi) / nh;
            }
            scores.set(i, c, params.tau / m * direct - offsets.get(i, c));
        }
    }
    mean_ce_of_scores(&scores, labels)
}

#[test]
fn calibration_gradients_match_finite_differences_under_stop_gradient() {
    let mut r = rng(15);
    for trial in 0..20 {
        let (classes, dim, batch) = (r.random_range(2..=5), r.random_range(2..=8), r.random_range(1..=8));
        let (h, phi, labels) = head_instance(&mut r, classes, dim, batch);
        let params = CalibrationParams {
            tau: r.random_range(1.0..20.0),
            gamma: if trial % 2 == 0 { 0.0 } else { r.random_range(0.0..1.0) },
            alpha: r.random_range(0.0..=1.0),
            beta: r.random_range(0.0..=1.0),
        };
        let past: Vec<Matrix> = (0..r.random_range(0..4))
            .map(|_| calibrate_rows(&gaussian_matrix(&mut r, classes, dim), params.gamma))
            .collect();
        let mut ring = SnapshotRing::new(past.len() + 1);
        for p in &past {
            ring.push(p.clone());
        }
        ring.push(calibrate_rows(&phi, params.gamma));
        let dirs = DriftDirections::new(
            (0..classes).map(|_| Some(unit(&mut r, dim))).collect(),
            (0..classes).map(|c| (c % 2 == 0).then(|| unit(&mut r, dim))).collect(),
            dim,
        );

        let scores = train_scores_batch(&h, &ring, &dirs, &params).unwrap();
        // offsets: whatever the full score holds beyond the direct terms
        let m = ring.len() as f64;
        let mut offsets = Matrix::zeros(batch, classes);
        for i in 0..batch {
            let hi = h.row(i);
            for c in 0..classes {
                let direct: f64 = ring.iter().map(|s| dot(s.row(c), hi) / norm(hi)).sum();
                offsets.set(i, c, params.tau / m * direct - scores.get(i, c));
            }
        }
        let (loss, ds) = calibration_loss(&scores, &labels, LossMode::Softmax);
        let base = frozen_calibration_loss(&h, &phi, &past, &offsets, &params, &labels);
        assert!((loss - base).abs() < 1e-12);

        let (dh, dphi) = calibration_backward(&h, &phi, &ring, &ds, &params).unwrap();
        let fd_h = fd_gradient(
            |x| {
                frozen_calibration_loss(
                    &Matrix::from_vec(batch, dim, x.to_vec()),
                    &phi,
                    &past,
                    &offsets,
                    &params,
                    &labels,
                )
            },
            h.as_slice(),
            1e-6,
        );
        let fd_phi = fd_gradient(
            |x| {
                frozen_calibration_loss(
                    &h,
                    &Matrix::from_vec(classes, dim, x.to_vec()),
                    &past,
                    &offsets,
                    &params,
                    &labels,
                )
            },
            phi.as_slice(),
            1e-6,
        );
        assert!(relative_error(dh.as_slice(), &fd_h, 1e-8) < 1e-4, "trial {trial} h");
        assert!(
            relative_error(dphi.as_slice(), &fd_phi, 1e-8) < 1e-4,
            "trial {trial} phi"
        );
    }
}
