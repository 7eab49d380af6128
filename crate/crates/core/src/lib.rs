//! Deterministic federated-learning simulator with a drift-aware causal
//! classifier head.
//!
//! * [`model`]: MLP feature extractor and linear head with manual gradients.
//! * [`optim`]: local and server momentum plus their closed-form unrollings.
//! * [`drift`]: per-class drift statistics and the invariant/drift split.
//! * [`causal`]: calibrated training and inference scores.
//! * [`federation`]: partitioning, participation, rounds and baselines.
//! * [`harness`]: configuration, datasets, metrics files and run drivers.

pub mod causal;
pub mod data;
pub mod drift;
pub mod federation;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;

pub use data::Dataset;
pub use federation::{FederationConfig, Method};
pub use harness::{ExperimentConfig, HarnessError as Error};
