//! TOML experiment configuration. Keys are kebab-case and match the CLI flag
//! names, so a flag `--dir-alpha 0.1` and a file line `dir-alpha = 0.1` set
//! the same field.
//!
//! ```toml
//! method = "cafe"          # cafe | fedavg | fedprox
//! head = "linear"          # baseline head: linear | cosine
//! clients = 100
//! dir-alpha = 0.5
//! cf = 1.0
//! sample-rate = 0.1
//! rounds = 300
//! local-epochs = 5         # local mini-batch steps per round
//! batch-size = 32
//! lr = 0.001
//! mu-local = 0.9
//! # mu-global = 0.5        # default 0.5 for cafe, 0 for the baselines
//! tau = 16.0
//! gamma = 0.01
//! alpha = 0.5
//! beta = 0.5
//! prox = 0.01
//! seed = 0
//! out = "out"
//!
//! [dataset]
//! kind = "synthetic"       # or "idx" with train-images, train-labels,
//! classes = 10             # test-images, test-labels
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SyntheticSpec;
use crate::causal::{CalibrationParams, LossMode};
use crate::drift::ResidualReduction;
use crate::federation::{BaselineHead, CafeOptions, DriftMode, FederationConfig, FederationError, Method};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config key `{key}` cannot be overridden: `{parent}` is not a table")]
    Override { key: String, parent: String },
    #[error("invalid {field} = {value}: expected {bound}")]
    Invalid {
        field: &'static str,
        value: String,
        bound: &'static str,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<FederationError> for ConfigError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Config { field, value, bound } => ConfigError::Invalid { field, value, bound },
            FederationError::Causal(crate::causal::CausalError::InvalidParam { name, value, bound }) => {
                ConfigError::Invalid {
                    field: name,
                    value: value.to_string(),
                    bound,
                }
            }
            other => ConfigError::Invalid {
                field: "config",
                value: other.to_string(),
                bound: "a valid configuration",
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    #[serde(rename_all = "kebab-case")]
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_idx_classes")]
        classes: usize,
    },
}

fn default_idx_classes() -> usize {
    10
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

/// On-disk layout of the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct ConfigFile {
    method: Method,
    head: BaselineHead,
    clients: usize,
    dir_alpha: f64,
    cf: f64,
    sample_rate: f64,
    rounds: usize,
    local_epochs: usize,
    batch_size: usize,
    lr: f64,
    mu_local: f64,
    mu_global: Option<f64>,
    tau: f64,
    gamma: f64,
    alpha: f64,
    beta: f64,
    prox: f64,
    hidden: usize,
    ring: Option<usize>,
    feature_calibration: bool,
    loss_mode: LossMode,
    drift_mode: DriftMode,
    reduction: ResidualReduction,
    seed: u64,
    seeds: Option<Vec<u64>>,
    parallel: bool,
    wall_clock: bool,
    out: PathBuf,
    dataset: DatasetSpec,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let f = FederationConfig::default();
        let c = CalibrationParams::default();
        Self {
            method: f.method,
            head: f.head,
            clients: f.clients,
            dir_alpha: f.dir_alpha,
            cf: f.cf,
            sample_rate: f.sample_rate,
            rounds: f.rounds,
            local_epochs: f.local_steps,
            batch_size: f.batch_size,
            lr: f.lr,
            mu_local: f.mu_local,
            mu_global: f.mu_global,
            tau: c.tau,
            gamma: c.gamma,
            alpha: c.alpha,
            beta: c.beta,
            prox: f.prox,
            hidden: f.hidden,
            ring: None,
            feature_calibration: true,
            loss_mode: LossMode::default(),
            drift_mode: DriftMode::default(),
            reduction: ResidualReduction::default(),
            seed: f.seed,
            seeds: None,
            parallel: f.parallel,
            wall_clock: f.wall_clock,
            out: PathBuf::from("out"),
            dataset: DatasetSpec::default(),
        }
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub federation: FederationConfig,
    pub dataset: DatasetSpec,
    /// Seeds for a batch of runs; `None` runs once with `federation.seed`.
    pub seeds: Option<Vec<u64>>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ConfigFile::default().into()
    }
}

impl From<ConfigFile> for ExperimentConfig {
    fn from(f: ConfigFile) -> Self {
        let federation = FederationConfig {
            method: f.method,
            head: f.head,
            clients: f.clients,
            dir_alpha: f.dir_alpha,
            cf: f.cf,
            sample_rate: f.sample_rate,
            rounds: f.rounds,
            local_steps: f.local_epochs,
            batch_size: f.batch_size,
            lr: f.lr,
            mu_local: f.mu_local,
            mu_global: f.mu_global,
            prox: f.prox,
            hidden: f.hidden,
            cafe: CafeOptions {
                calibration: CalibrationParams {
                    tau: f.tau,
                    gamma: f.gamma,
                    alpha: f.alpha,
                    beta: f.beta,
                },
                ring: f.ring,
                feature_calibration: f.feature_calibration,
                loss: f.loss_mode,
                drift_mode: f.drift_mode,
                reduction: f.reduction,
            },
            seed: f.seed,
            parallel: f.parallel,
            wall_clock: f.wall_clock,
        };
        Self {
            federation,
            dataset: f.dataset,
            seeds: f.seeds,
            out: f.out,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.federation.validate()?;
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            if s.classes < 2 {
                return Err(invalid("dataset.classes", s.classes, "classes >= 2"));
            }
            if s.dim < s.classes {
                return Err(invalid("dataset.dim", s.dim, "dim >= classes"));
            }
            if s.per_class == 0 {
                return Err(invalid("dataset.per-class", s.per_class, "per-class >= 1"));
            }
            if let Some(d) = s.long_tail {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(invalid("dataset.long-tail", d, "0 < long-tail <= 1"));
                }
            }
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(invalid("seeds", "[]", "at least one seed"));
            }
        }
        Ok(())
    }
}

fn invalid(field: &'static str, value: impl ToString, bound: &'static str) -> ConfigError {
    ConfigError::Invalid {
        field,
        value: value.to_string(),
        bound,
    }
}

/// Parses `text` (empty means all defaults), applies `overrides` on top and
/// validates. Override keys may be dotted (`dataset.classes`).
pub fn parse_config(text: &str, overrides: &[(String, toml::Value)]) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text)?;
    for (key, value) in overrides {
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().expect("split yields at least one part");
        let mut cur = &mut table;
        for p in parts {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = match entry {
                toml::Value::Table(t) => t,
                _ => {
                    return Err(ConfigError::Override {
                        key: key.clone(),
                        parent: p.to_string(),
                    })
                }
            };
        }
        cur.insert(leaf.to_string(), value.clone());
    }
    let file: ConfigFile = toml::Value::Table(table).try_into()?;
    let cfg = ExperimentConfig::from(file);
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path, overrides: &[(String, toml::Value)]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, overrides)
}
