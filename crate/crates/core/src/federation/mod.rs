//! Round orchestration: Dirichlet partitioning, availability-driven client
//! selection, local training, server aggregation and the FedAvg / FedProx /
//! cosine-classifier baselines.

mod checkpoint;
mod client;
mod experiment;
mod participation;
mod partition;
mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{CalibrationParams, CausalError, LossMode};
use crate::data::DataError;
use crate::drift::{DriftError, ResidualReduction};
use crate::model::ModelError;
use crate::optim::OptimError;

pub use checkpoint::{Checkpoint, CheckpointError, HeadKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use client::{client_local_train, ClientUpdate, RoundContext};
pub use experiment::{evaluate, run_experiment, run_with_partition, ExperimentOutput, MetricsRow};
pub use participation::ParticipationModel;
pub use partition::{dirichlet_partition, Partition};
pub use server::Server;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid {field} = {value}: expected {bound}")]
    Config {
        field: &'static str,
        value: String,
        bound: &'static str,
    },
    #[error("{samples} samples cannot be split across {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },
    #[error("no client updates to aggregate")]
    NoUpdates,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub(crate) fn config_error(field: &'static str, value: impl ToString, bound: &'static str) -> FederationError {
    FederationError::Config {
        field,
        value: value.to_string(),
        bound,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Cafe,
    FedAvg,
    FedProx,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cafe => "cafe",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
        }
    }
}

/// Classifier head used by the baselines. CAFE always uses its own head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineHead {
    /// Linear logits with softmax cross-entropy.
    #[default]
    Linear,
    /// `τ·cos(h, φ_c)` logits.
    Cosine,
}

/// How the server carries `λ_G` from one round to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    /// `Λ_G ← μ_G Λ_G + Σ_k p_k Δλ_k`; clients start from `μ_G Λ_G`.
    #[default]
    Decay,
    /// `λ_G` restarts at zero every round.
    PerRound,
}

/// The three switchable parts of the CAFE head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    /// Parameter calibration off: `γ = 0`.
    NoPc,
    /// Feature calibration off: no drift subtraction.
    NoFc,
    /// History-aware average off: ring of size 1.
    NoHa,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoPc, Ablation::NoFc, Ablation::NoHa];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPc => "no_pc",
            Ablation::NoFc => "no_fc",
            Ablation::NoHa => "no_ha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CafeOptions {
    pub calibration: CalibrationParams,
    /// Snapshot ring capacity; `None` uses the number of local steps.
    pub ring: Option<usize>,
    pub feature_calibration: bool,
    pub loss: LossMode,
    pub drift_mode: DriftMode,
    pub reduction: ResidualReduction,
}

impl Default for CafeOptions {
    fn default() -> Self {
        Self {
            calibration: CalibrationParams::default(),
            ring: None,
            feature_calibration: true,
            loss: LossMode::Softmax,
            drift_mode: DriftMode::Decay,
            reduction: ResidualReduction::Sum,
        }
    }
}

impl CafeOptions {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Full => {}
            Ablation::NoPc => self.calibration.gamma = 0.0,
            Ablation::NoFc => self.feature_calibration = false,
            Ablation::NoHa => self.ring = Some(1),
        }
        self
    }
}

/// Everything that determines a federated run apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub method: Method,
    pub head: BaselineHead,
    pub clients: usize,
    pub dir_alpha: f64,
    pub cf: f64,
    pub sample_rate: f64,
    pub rounds: usize,
    /// Local mini-batch steps per round.
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mu_local: f64,
    /// Server momentum; `None` picks 0.5 for CAFE and 0 for the baselines.
    pub mu_global: Option<f64>,
    pub prox: f64,
    pub hidden: usize,
    pub cafe: CafeOptions,
    pub seed: u64,
    pub parallel: bool,
    /// Record elapsed seconds in the metrics; off keeps output reproducible.
    pub wall_clock: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            method: Method::Cafe,
            head: BaselineHead::Linear,
            clients: 100,
            dir_alpha: 0.5,
            cf: 1.0,
            sample_rate: 0.1,
            rounds: 300,
            local_steps: 5,
            batch_size: 32,
            lr: 0.001,
            mu_local: 0.9,
            mu_global: None,
            prox: 0.01,
            hidden: 64,
            cafe: CafeOptions::default(),
            seed: 0,
            parallel: true,
            wall_clock: false,
        }
    }
}

impl FederationConfig {
    pub fn effective_mu_global(&self) -> f64 {
        self.mu_global.unwrap_or(match self.method {
            Method::Cafe => 0.5,
            Method::FedAvg | Method::FedProx => 0.0,
        })
    }

    pub fn ring_capacity(&self) -> usize {
        self.cafe.ring.unwrap_or(self.local_steps).max(1)
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        if self.clients < 2 {
            return Err(config_error("clients", self.clients, "clients >= 2"));
        }
        if !(self.dir_alpha > 0.0 && self.dir_alpha.is_finite()) {
            return Err(config_error("dir-alpha", self.dir_alpha, "dir-alpha > 0"));
        }
        if !(self.cf > 0.0 && self.cf <= 1.0) {
            return Err(config_error("cf", self.cf, "0 < cf <= 1"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(config_error("sample-rate", self.sample_rate, "0 < sample-rate <= 1"));
        }
        if self.batch_size == 0 {
            return Err(config_error("batch-size", self.batch_size, "batch-size >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_error("lr", self.lr, "lr > 0"));
        }
        if !(0.0..1.0).contains(&self.mu_local) {
            return Err(config_error("mu-local", self.mu_local, "0 <= mu-local < 1"));
        }
        let mu_g = self.effective_mu_global();
        if !(0.0..1.0).contains(&mu_g) {
            return Err(config_error("mu-global", mu_g, "0 <= mu-global < 1"));
        }
        if !(self.prox >= 0.0 && self.prox.is_finite()) {
            return Err(config_error("prox", self.prox, "prox >= 0"));
        }
        if self.hidden == 0 {
            return Err(config_error("hidden", self.hidden, "hidden >= 1"));
        }
        self.cafe.calibration.validate()?;
        Ok(())
    }
}
