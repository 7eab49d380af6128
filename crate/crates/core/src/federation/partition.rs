use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::{config_error, FederationError};
use crate::rng::Rng;

/// Disjoint per-client index lists covering the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
    histograms: Vec<Vec<usize>>,
    total: usize,
}

impl Partition {
    /// Builds the partition from explicit shards; `labels` supplies the class
    /// histograms.
    pub fn from_shards(shards: Vec<Vec<usize>>, labels: &[usize], num_classes: usize) -> Self {
        let histograms = shards
            .iter()
            .map(|s| {
                let mut h = vec![0; num_classes];
                for &i in s {
                    h[labels[i]] += 1;
                }
                h
            })
            .collect();
        let total = shards.iter().map(Vec::len).sum();
        Self {
            shards,
            histograms,
            total,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, k: usize) -> &[usize] {
        &self.shards[k]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    /// `n_{k,c}` for client `k`.
    pub fn histogram(&self, k: usize) -> &[usize] {
        &self.histograms[k]
    }

    /// `p_k = n_k / n`.
    pub fn weight(&self, k: usize) -> f64 {
        self.shards[k].len() as f64 / self.total as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.num_clients()).map(|k| self.weight(k)).collect()
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Splits every class across `clients` by a symmetric Dirichlet draw with the
/// given concentration. Clients left empty each receive one sample from the
/// currently largest client.
pub fn dirichlet_partition(
    labels: &[usize],
    num_classes: usize,
    clients: usize,
    concentration: f64,
    rng: &mut Rng,
) -> Result<Partition, FederationError> {
    if clients < 2 {
        return Err(config_error("clients", clients, "clients >= 2"));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(config_error("dir-alpha", concentration, "dir-alpha > 0"));
    }
    if labels.len() < clients {
        return Err(FederationError::TooFewSamples {
            samples: labels.len(),
            clients,
        });
    }
    let gamma =
        Gamma::new(concentration, 1.0).map_err(|_| config_error("dir-alpha", concentration, "dir-alpha > 0"))?;

    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut shards = vec![Vec::new(); clients];
    for mut members in by_class {
        let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        let props: Vec<f64> = if sum > 0.0 && sum.is_finite() {
            draws.iter().map(|d| d / sum).collect()
        } else {
            vec![1.0 / clients as f64; clients]
        };
        members.shuffle(rng);
        let n = members.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (k, p) in props.iter().enumerate() {
            cum += p;
            let end = if k + 1 == clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            shards[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..clients)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("at least two clients");
        let moved = shards[largest].pop().expect("largest shard is nonempty");
        shards[empty].push(moved);
    }

    Ok(Partition::from_shards(shards, labels, num_classes))
}
