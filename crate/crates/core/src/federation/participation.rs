use rand::seq::index;
use rand::Rng as _;

use super::{config_error, FederationError};
use crate::rng::Rng;

/// Per-client availability `f_k`, spaced linearly from `CF` (client 0) to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipationModel {
    freqs: Vec<f64>,
    sample_rate: f64,
}

impl ParticipationModel {
    pub fn new(clients: usize, cf: f64, sample_rate: f64) -> Result<Self, FederationError> {
        if clients == 0 {
            return Err(config_error("clients", clients, "clients >= 1"));
        }
        if !(cf > 0.0 && cf <= 1.0) {
            return Err(config_error("cf", cf, "0 < cf <= 1"));
        }
        if !(sample_rate > 0.0 && sample_rate <= 1.0) {
            return Err(config_error("sample-rate", sample_rate, "0 < sample-rate <= 1"));
        }
        let freqs = if clients == 1 {
            vec![1.0]
        } else {
            (0..clients)
                .map(|k| cf + (1.0 - cf) * k as f64 / (clients - 1) as f64)
                .collect()
        };
        Ok(Self { freqs, sample_rate })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn num_clients(&self) -> usize {
        self.freqs.len()
    }

    pub fn pool_size(&self) -> usize {
        let k = self.freqs.len();
        ((self.sample_rate * k as f64).ceil() as usize).clamp(1, k)
    }

    /// Draws a uniform candidate pool of `⌈rate·K⌉` clients and keeps each
    /// candidate with probability `f_k`, redrawing until the result is
    /// nonempty. The returned indices are ascending.
    pub fn select(&self, rng: &mut Rng) -> Vec<usize> {
        let k = self.freqs.len();
        let m = self.pool_size();
        loop {
            let mut pool = index::sample(rng, k, m).into_vec();
            pool.sort_unstable();
            let kept: Vec<usize> = pool
                .into_iter()
                .filter(|&c| rng.random::<f64>() < self.freqs[c])
                .collect();
            if !kept.is_empty() {
                return kept;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn homogeneous_and_endpoint_frequencies() {
        let p = ParticipationModel::new(5, 1.0, 0.5).unwrap();
        assert!(p.frequencies().iter().all(|&f| f == 1.0));
        let p = ParticipationModel::new(2, 0.1, 0.5).unwrap();
        assert_eq!(p.frequencies(), &[0.1, 1.0]);
    }

    #[test]
    fn full_rate_full_availability_selects_everyone() {
        let p = ParticipationModel::new(6, 1.0, 1.0).unwrap();
        let mut r = rng::stream(0, rng::SELECTION);
        for _ in 0..10 {
            assert_eq!(p.select(&mut r), (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn selection_is_never_empty() {
        let p = ParticipationModel::new(10, 0.01, 0.1).unwrap();
        let mut r = rng::stream(1, rng::SELECTION);
        for _ in 0..200 {
            let s = p.select(&mut r);
            assert!(!s.is_empty());
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ParticipationModel::new(3, 0.0, 0.5).is_err());
        assert!(ParticipationModel::new(3, 1.1, 0.5).is_err());
        assert!(ParticipationModel::new(3, 0.5, 0.0).is_err());
    }
}
