use rand::seq::index;

use super::{BaselineHead, FederationConfig, FederationError, Method};
use crate::causal::{calibrate_rows, calibration_backward, calibration_loss, train_scores_batch, SnapshotRing};
use crate::data::Dataset;
use crate::drift::{DriftAccumulators, DriftDirections};
use crate::linalg::Matrix;
use crate::model::{
    backprop_extractor, cosine_backward, cosine_scores, cross_entropy, forward_batch, grad_wrt_classifier,
    grad_wrt_features, logits_batch, softmax_rows, BatchResidual, ModelParams,
};
use crate::optim::LocalMomentum;
use crate::rng;

/// Server state a client reads at the start of a round.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub round: usize,
    pub global: &'a ModelParams,
    /// Initial `λ_G` for the round (CAFE only).
    pub carry: Option<&'a Matrix>,
}

/// What a client uploads after its local steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub samples: usize,
    /// `(w_in − w_out) / η`.
    pub xi: Vec<f64>,
    /// Change of `λ_G` over this client's round (CAFE only).
    pub lambda_increment: Option<Matrix>,
    /// Mean training loss over the local steps.
    pub loss: f64,
}

/// Runs `local_steps` mini-batch momentum steps on one client's shard.
pub fn client_local_train(
    cfg: &FederationConfig,
    ctx: RoundContext<'_>,
    data: &Dataset,
    shard: &[usize],
    client: usize,
) -> Result<ClientUpdate, FederationError> {
    let global = ctx.global;
    let dim = global.as_slice().len();
    let mut w = global.clone();
    let mut rng = rng::client_stream(cfg.seed, ctx.round, client);
    let mut opt = LocalMomentum::new(dim, cfg.mu_local, cfg.lr)?;

    if shard.is_empty() {
        log::warn!("client {client} has no samples; skipped");
        return Ok(ClientUpdate {
            client,
            samples: 0,
            xi: vec![0.0; dim],
            lambda_increment: None,
            loss: 0.0,
        });
    }

    let classes = global.num_classes();
    let emb = global.embedding_dim();
    let cafe = cfg.method == Method::Cafe;
    let mut drift = DriftAccumulators::new(classes, emb, cfg.cafe.reduction);
    let mut ring = SnapshotRing::new(cfg.ring_capacity());
    if cafe {
        drift.begin_round(ctx.round, global.classifier_matrix(), ctx.carry)?;
    }
    let prox = if cfg.method == Method::FedProx && cfg.prox > 0.0 {
        Some(cfg.prox)
    } else {
        None
    };

    let cls = global.shape().classifier_range();
    let batch = cfg.batch_size.min(shard.len());
    let mut loss_sum = 0.0;
    for _ in 0..cfg.local_steps {
        let picks: Vec<usize> = index::sample(&mut rng, shard.len(), batch)
            .into_iter()
            .map(|j| shard[j])
            .collect();
        let (x, labels) = data.gather(&picks);
        let (h, cache) = forward_batch(&x, &w)?;
        let phi = w.classifier_matrix();
        let n = labels.len() as f64;

        let mut grad = ModelParams::zeros_like(&w);
        let mut residual = None;
        let (loss, dh, dphi) = if cafe {
            ring.push(calibrate_rows(&phi, cfg.cafe.calibration.gamma));
            let dirs = if cfg.cafe.feature_calibration {
                drift.directions()
            } else {
                DriftDirections::invalid(classes, emb)
            };
            let scores = train_scores_batch(&h, &ring, &dirs, &cfg.cafe.calibration)?;
            let (loss, ds) = calibration_loss(&scores, &labels, cfg.cafe.loss);
            let (dh, dphi) = calibration_backward(&h, &phi, &ring, &ds, &cfg.cafe.calibration)?;
            residual = Some(BatchResidual::new(&softmax_rows(&scores), &labels)?);
            (loss, dh, dphi)
        } else {
            match cfg.head {
                BaselineHead::Linear => {
                    let probs = softmax_rows(&logits_batch(&h, &phi)?);
                    let res = BatchResidual::new(&probs, &labels)?;
                    let mut dh = grad_wrt_features(&res, &phi)?;
                    let mut dphi = grad_wrt_classifier(&res, &h)?;
                    dh.scale(1.0 / n);
                    dphi.scale(1.0 / n);
                    (cross_entropy(&probs, &labels), dh, dphi)
                }
                BaselineHead::Cosine => {
                    let tau = cfg.cafe.calibration.tau;
                    let scores = cosine_scores(&h, &phi, tau)?;
                    let probs = softmax_rows(&scores);
                    let mut ds = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        ds.set(i, y, ds.get(i, y) - 1.0);
                    }
                    ds.scale(1.0 / n);
                    let (dh, dphi) = cosine_backward(&h, &phi, &ds, tau);
                    (cross_entropy(&probs, &labels), dh, dphi)
                }
            }
        };
        loss_sum += loss;

        grad.as_mut_slice()[cls.clone()].copy_from_slice(dphi.as_slice());
        backprop_extractor(&dh, &w, &cache, &mut grad)?;
        if let Some(mu) = prox {
            for ((g, wi), wg) in grad.as_mut_slice().iter_mut().zip(w.as_slice()).zip(global.as_slice()) {
                *g += mu * (wi - wg);
            }
        }
        opt.step(grad.as_slice(), w.as_mut_slice())?;

        if let Some(res) = residual {
            drift.update_global(&res)?;
            drift.update_local(&res, &opt.buffer_sum()[cls.clone()], cfg.lr)?;
        }
    }

    let xi = global
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(a, b)| (a - b) / cfg.lr)
        .collect();
    let lambda_increment = cafe.then(|| {
        let mut inc = drift.global().clone();
        if let Some(c) = ctx.carry {
            for (v, c) in inc.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *v -= c;
            }
        }
        inc
    });
    Ok(ClientUpdate {
        client,
        samples: shard.len(),
        xi,
        lambda_increment,
        loss: if cfg.local_steps == 0 {
            0.0
        } else {
            loss_sum / cfg.local_steps as f64
        },
    })
}
