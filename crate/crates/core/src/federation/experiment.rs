use std::time::Instant;

use rayon::prelude::*;

use super::{
    client_local_train, dirichlet_partition, BaselineHead, Checkpoint, ClientUpdate, FederationConfig, FederationError,
    HeadKind, Method, ParticipationModel, Partition, RoundContext, Server,
};
use crate::causal::{infer_scores, predict, CalibrationParams};
use crate::data::Dataset;
use crate::linalg::Matrix;
use crate::model::{cosine_scores, cross_entropy, forward_batch, logits_batch, softmax_rows, ModelParams, ModelShape};
use crate::rng;

/// One line of the metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub acc: f64,
    pub loss: f64,
    pub per_class: Vec<f64>,
    /// Mean number of rounds each client has taken part in so far.
    pub participation: f64,
    pub secs: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
    pub partition: Partition,
}

impl ExperimentOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.acc)
    }
}

/// Test-time scores of a batch under the given head.
pub(crate) fn head_scores(
    params: &ModelParams,
    head: HeadKind,
    calibration: &CalibrationParams,
    global_dirs: &[Option<Vec<f64>>],
    x: &Matrix,
) -> Result<Matrix, FederationError> {
    let (h, _) = forward_batch(x, params)?;
    let phi = params.classifier_matrix();
    Ok(match head {
        HeadKind::Linear => logits_batch(&h, &phi)?,
        HeadKind::Cosine => cosine_scores(&h, &phi, calibration.tau)?,
        HeadKind::Calibrated => {
            let mut out = Matrix::zeros(h.rows(), phi.rows());
            for i in 0..h.rows() {
                let s = infer_scores(
                    h.row(i),
                    &phi,
                    global_dirs,
                    calibration.tau,
                    calibration.gamma,
                    calibration.alpha,
                );
                out.row_mut(i).copy_from_slice(&s);
            }
            out
        }
    })
}

/// Accuracy, mean cross-entropy of the softmaxed scores and per-class
/// accuracy (0 for classes absent from `test`).
pub fn evaluate(checkpoint: &Checkpoint, test: &Dataset) -> Result<(f64, f64, Vec<f64>), FederationError> {
    let scores = head_scores(
        &checkpoint.params,
        checkpoint.head,
        &checkpoint.calibration,
        &checkpoint.global_dirs,
        test.features(),
    )?;
    let probs = softmax_rows(&scores);
    let loss = cross_entropy(&probs, test.labels());
    let classes = test.num_classes();
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (i, &y) in test.labels().iter().enumerate() {
        counts[y] += 1;
        if predict(scores.row(i)) == y {
            hits[y] += 1;
        }
    }
    let total_hits: usize = hits.iter().sum();
    let acc = if test.is_empty() {
        0.0
    } else {
        total_hits as f64 / test.len() as f64
    };
    let per_class = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect();
    Ok((acc, loss, per_class))
}

/// Partitions `train` with the configured Dirichlet draw, then runs
/// [`run_with_partition`].
pub fn run_experiment(
    cfg: &FederationConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<ExperimentOutput, FederationError> {
    cfg.validate()?;
    let partition = dirichlet_partition(
        train.labels(),
        train.num_classes(),
        cfg.clients,
        cfg.dir_alpha,
        &mut rng::stream(cfg.seed, rng::PARTITION),
    )?;
    run_with_partition(cfg, train, test, partition)
}

/// Runs `cfg.rounds` rounds of select, broadcast, local training and
/// aggregation on a fixed partition. Row 0 describes the initial model.
pub fn run_with_partition(
    cfg: &FederationConfig,
    train: &Dataset,
    test: &Dataset,
    partition: Partition,
) -> Result<ExperimentOutput, FederationError> {
    cfg.validate()?;
    if partition.num_clients() != cfg.clients {
        return Err(super::config_error(
            "clients",
            cfg.clients,
            "clients equal to the partition's client count",
        ));
    }
    let start = Instant::now();
    let shape = ModelShape::mlp(train.dim(), cfg.hidden, train.num_classes());
    let init = ModelParams::init(shape, &mut rng::stream(cfg.seed, rng::INIT));
    let cafe = cfg.method == Method::Cafe;
    let mut server = Server::new(init, cfg.effective_mu_global(), cfg.lr, cafe, cfg.cafe.drift_mode)?;
    let participation = ParticipationModel::new(cfg.clients, cfg.cf, cfg.sample_rate)?;
    let mut selection_rng = rng::stream(cfg.seed, rng::SELECTION);
    let head = match (cfg.method, cfg.head) {
        (Method::Cafe, _) => HeadKind::Calibrated,
        (_, BaselineHead::Linear) => HeadKind::Linear,
        (_, BaselineHead::Cosine) => HeadKind::Cosine,
    };

    let mut total_participations = 0usize;
    let mut rows = Vec::with_capacity(cfg.rounds + 1);
    let snapshot = |server: &Server, round: usize, rng: &rng::Rng| Checkpoint {
        round: round as u64,
        seed: cfg.seed,
        rng_stream: rng.get_stream(),
        rng_word_pos: rng.get_word_pos(),
        head,
        calibration: cfg.cafe.calibration,
        params: server.params().clone(),
        global_dirs: if cafe && cfg.cafe.feature_calibration {
            server.directions().global_all().to_vec()
        } else {
            vec![None; server.params().num_classes()]
        },
    };
    let mut record = |ck: &Checkpoint, round: usize, participations: usize| -> Result<(), FederationError> {
        let (acc, loss, per_class) = evaluate(ck, test)?;
        rows.push(MetricsRow {
            round,
            acc,
            loss,
            per_class,
            participation: participations as f64 / cfg.clients as f64,
            secs: if cfg.wall_clock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        Ok(())
    };

    let mut checkpoint = snapshot(&server, 0, &selection_rng);
    record(&checkpoint, 0, 0)?;
    for round in 1..=cfg.rounds {
        let selected = participation.select(&mut selection_rng);
        total_participations += selected.len();
        let carry = server.carry();
        let ctx = RoundContext {
            round,
            global: server.params(),
            carry: carry.as_ref(),
        };
        let train_one = |&k: &usize| -> Result<ClientUpdate, FederationError> {
            client_local_train(cfg, ctx, train, partition.shard(k), k)
        };
        let updates: Vec<ClientUpdate> = if cfg.parallel {
            selected.par_iter().map(train_one).collect::<Result<_, _>>()?
        } else {
            selected.iter().map(train_one).collect::<Result<_, _>>()?
        };
        let weights = server.aggregate(&updates)?;
        log::debug!(
            "round {round}: clients {:?}, weights {:?}, mean local loss {:.4}",
            selected,
            weights,
            updates.iter().map(|u| u.loss).sum::<f64>() / updates.len() as f64
        );
        checkpoint = snapshot(&server, round, &selection_rng);
        record(&checkpoint, round, total_participations)?;
    }

    Ok(ExperimentOutput {
        rows,
        checkpoint,
        partition,
    })
}

impl Checkpoint {
    /// Test-time scores of every row of `x` under the stored head.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix, FederationError> {
        head_scores(&self.params, self.head, &self.calibration, &self.global_dirs, x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>, FederationError> {
        let s = self.scores(x)?;
        Ok(s.iter_rows().map(predict).collect())
    }
}
