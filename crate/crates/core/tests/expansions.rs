mod common;

use common::*;
use driftfl::linalg::relative_error;
use driftfl::optim::{expand_global, expand_local, Contribution, GlobalMomentum, LocalMomentum, RoundHistory};
use rand::Rng as _;

#[test]
fn local_closed_form_matches_iteration_and_plain_loop() {
    let mut r = rng(21);
    for _ in 0..100 {
        let dim = r.random_range(1..=12);
        let steps = r.random_range(1..=20);
        let decay = r.random_range(0.0..0.99);
        let lr = r.random_range(1e-3..0.5);
        let grads: Vec<Vec<f64>> = (0..steps).map(|_| gaussian(&mut r, dim)).collect();

        let mut opt = LocalMomentum::new(dim, decay, lr).unwrap().with_history();
        let mut w = gaussian(&mut r, dim);
        let w0 = w.clone();
        for g in &grads {
            opt.step(g, &mut w).unwrap();
        }
        let iterative: Vec<f64> = w.iter().zip(&w0).map(|(a, b)| a - b).collect();
        let closed = expand_local(opt.history().unwrap(), decay, lr).unwrap();
        let (plain, buffer) = heavy_ball(&grads, decay, lr);

        assert!(relative_error(&closed, &iterative, 1e-12) < 1e-8);
        assert!(relative_error(&closed, &plain, 1e-12) < 1e-10);
        assert!(relative_error(opt.buffer(), &buffer, 1e-12) < 1e-12);
        // the in-round displacement is −η times the running buffer sum
        let from_sum: Vec<f64> = opt.buffer_sum().iter().map(|s| -lr * s).collect();
        assert!(relative_error(&from_sum, &iterative, 1e-12) < 1e-10);
    }
}

#[test]
fn global_closed_form_matches_iteration() {
    let mut r = rng(22);
    for _ in 0..100 {
        let dim = r.random_range(1..=10);
        let rounds = r.random_range(1..=20);
        let decay = r.random_range(0.0..0.99);
        let lr = r.random_range(1e-3..0.5);
        let mut server = GlobalMomentum::new(dim, decay, lr).unwrap().with_history();
        let mut w = gaussian(&mut r, dim);
        let w0 = w.clone();
        for _ in 0..rounds {
            let k = r.random_range(1..=5);
            let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut clients: Vec<usize> = (0..10).collect();
            clients.truncate(k);
            let contributions: Vec<Contribution> = clients
                .iter()
                .zip(&raw)
                .map(|(&client, &w)| Contribution {
                    client,
                    weight: w / total,
                    update: gaussian(&mut r, dim),
                })
                .collect();
            server.step_round(&contributions, &mut w).unwrap();
        }
        let exp = expand_global(server.history().unwrap(), decay, lr).unwrap();
        let disp: Vec<f64> = w.iter().zip(&w0).map(|(a, b)| a - b).collect();
        assert!(relative_error(&exp.displacement, &disp, 1e-12) < 1e-8);
        assert!(relative_error(&exp.momentum, server.buffer(), 1e-12) < 1e-8);

        let mut summed = vec![0.0; dim];
        for share in exp.per_client.values() {
            for (s, v) in summed.iter_mut().zip(share) {
                *s += v;
            }
        }
        assert!(relative_error(&summed, &exp.displacement, 1e-12) < 1e-10);
    }
}

#[test]
fn global_expansion_of_a_single_round_is_the_aggregate() {
    let h = vec![RoundHistory {
        contributions: vec![Contribution {
            client: 0,
            weight: 1.0,
            update: vec![2.0, -1.0],
        }],
    }];
    let exp = expand_global(&h, 0.7, 0.1).unwrap();
    assert_eq!(exp.momentum, vec![2.0, -1.0]);
    assert!((exp.displacement[0] + 0.2).abs() < 1e-15);
}
