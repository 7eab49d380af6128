use super::{ClientUpdate, DriftMode, FederationError};
use crate::drift::DriftDirections;
use crate::linalg::Matrix;
use crate::model::ModelParams;
use crate::optim::{Contribution, GlobalMomentum};

/// Global model, server momentum and (for CAFE) the running `Λ_G`.
#[derive(Debug, Clone)]
pub struct Server {
    params: ModelParams,
    momentum: GlobalMomentum,
    lambda: Option<Matrix>,
    drift_mode: DriftMode,
}

impl Server {
    /// `track_drift` enables the `Λ_G` state used by CAFE.
    pub fn new(
        params: ModelParams,
        mu_global: f64,
        lr: f64,
        track_drift: bool,
        drift_mode: DriftMode,
    ) -> Result<Self, FederationError> {
        let momentum = GlobalMomentum::new(params.as_slice().len(), mu_global, lr)?;
        let lambda = track_drift.then(|| Matrix::zeros(params.num_classes(), params.embedding_dim()));
        Ok(Self {
            params,
            momentum,
            lambda,
            drift_mode,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn lambda(&self) -> Option<&Matrix> {
        self.lambda.as_ref()
    }

    /// Initial `λ_G` handed to clients at the start of a round.
    pub fn carry(&self) -> Option<Matrix> {
        let lambda = self.lambda.as_ref()?;
        match self.drift_mode {
            DriftMode::Decay => {
                let mut c = lambda.clone();
                c.scale(self.momentum.decay());
                Some(c)
            }
            DriftMode::PerRound => Some(Matrix::zeros(lambda.rows(), lambda.cols())),
        }
    }

    /// Per-class global drift directions of the current `Λ_G`.
    pub fn directions(&self) -> DriftDirections {
        match &self.lambda {
            Some(l) => DriftDirections::from_accumulators(l, None),
            None => DriftDirections::invalid(self.params.num_classes(), self.params.embedding_dim()),
        }
    }

    /// Weighted mean of the updates (weights `n_k` renormalized over the
    /// participants, summed in ascending client order) followed by one global
    /// momentum step. Returns the participant weights.
    pub fn aggregate(&mut self, updates: &[ClientUpdate]) -> Result<Vec<f64>, FederationError> {
        let mut order: Vec<&ClientUpdate> = updates.iter().filter(|u| u.samples > 0).collect();
        if order.is_empty() {
            return Err(FederationError::NoUpdates);
        }
        order.sort_by_key(|u| u.client);
        let total: usize = order.iter().map(|u| u.samples).sum();
        let weights: Vec<f64> = order.iter().map(|u| u.samples as f64 / total as f64).collect();

        let contributions: Vec<Contribution> = order
            .iter()
            .zip(&weights)
            .map(|(u, &weight)| Contribution {
                client: u.client,
                weight,
                update: u.xi.clone(),
            })
            .collect();
        self.momentum.step_round(&contributions, self.params.as_mut_slice())?;

        if let Some(carry) = self.carry() {
            let mut next = carry;
            for (u, &p) in order.iter().zip(&weights) {
                if let Some(inc) = &u.lambda_increment {
                    for (n, d) in next.as_mut_slice().iter_mut().zip(inc.as_slice()) {
                        *n += p * d;
                    }
                }
            }
            self.lambda = Some(next);
        }
        Ok(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;

    fn update(client: usize, samples: usize, xi: Vec<f64>) -> ClientUpdate {
        ClientUpdate {
            client,
            samples,
            xi,
            lambda_increment: None,
            loss: 0.0,
        }
    }

    fn tiny() -> ModelParams {
        ModelParams::zeros(ModelShape {
            input_dim: 1,
            layers: vec![],
            num_classes: 2,
        })
    }

    #[test]
    fn single_participant_moves_by_its_update() {
        let mut s = Server::new(tiny(), 0.0, 0.5, false, DriftMode::Decay).unwrap();
        let w = s.aggregate(&[update(3, 10, vec![1.0, -2.0])]).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(s.params().as_slice(), &[-0.5, 1.0]);
    }

    #[test]
    fn identical_updates_aggregate_to_the_common_update() {
        let mut s = Server::new(tiny(), 0.0, 1.0, false, DriftMode::Decay).unwrap();
        s.aggregate(&[update(0, 3, vec![0.3, 0.7]), update(1, 9, vec![0.3, 0.7])])
            .unwrap();
        let p = s.params().as_slice();
        assert!((p[0] + 0.3).abs() < 1e-15 && (p[1] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn weights_follow_sample_counts_and_sum_to_one() {
        let mut s = Server::new(tiny(), 0.0, 1.0, false, DriftMode::Decay).unwrap();
        let w = s
            .aggregate(&[
                update(2, 1, vec![0.0; 2]),
                update(0, 3, vec![0.0; 2]),
                update(1, 0, vec![9.0; 2]),
            ])
            .unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
    }

    #[test]
    fn empty_round_is_an_error() {
        let mut s = Server::new(tiny(), 0.0, 1.0, false, DriftMode::Decay).unwrap();
        assert!(matches!(s.aggregate(&[]), Err(FederationError::NoUpdates)));
    }
}
