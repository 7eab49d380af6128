//! Configuration, datasets, metrics files and the run drivers behind the CLI.

mod config;
mod idx;
mod metrics;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{load_config, parse_config, ConfigError, DatasetSpec, ExperimentConfig};
pub use idx::{load_idx, write_idx_images, write_idx_labels, IdxError, IMAGE_MAGIC, LABEL_MAGIC};
pub use metrics::{emit_plot_data, emit_plot_data_to, metrics_header, write_metrics, write_metrics_to};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::data::{DataError, Dataset};
use crate::federation::{
    dirichlet_partition, run_experiment, run_with_partition, Ablation, CheckpointError, ExperimentOutput,
    FederationConfig, FederationError,
};
use crate::rng;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no metrics rows to write")]
    EmptyMetrics,
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(source: std::io::Error) -> Self {
        HarnessError::Io {
            path: PathBuf::new(),
            source,
        }
    }
}

/// `(train, test)` for the given spec. Synthetic data is drawn from `seed`.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<(Dataset, Dataset), HarnessError> {
    Ok(match spec {
        DatasetSpec::Synthetic(s) => generate_synthetic(s, seed)?,
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
        } => (
            load_idx(train_images, train_labels, *classes)?,
            load_idx(test_images, test_labels, *classes)?,
        ),
    })
}

/// Runs full CAFE and the three single-part ablations on one shared
/// partition.
pub fn run_ablation(
    cfg: &FederationConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<(Ablation, ExperimentOutput)>, HarnessError> {
    cfg.validate()?;
    let partition = dirichlet_partition(
        train.labels(),
        train.num_classes(),
        cfg.clients,
        cfg.dir_alpha,
        &mut rng::stream(cfg.seed, rng::PARTITION),
    )?;
    Ablation::ALL
        .iter()
        .map(|&a| {
            let mut c = cfg.clone();
            c.cafe = c.cafe.clone().with_ablation(a);
            Ok((a, run_with_partition(&c, train, test, partition.clone())?))
        })
        .collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Paths written by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub metrics: Vec<PathBuf>,
    pub final_accuracy: Vec<(u64, f64)>,
    pub summary: Option<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_run(dir: &Path, method: &str, out: &ExperimentOutput) -> Result<PathBuf, HarnessError> {
    ensure_dir(dir)?;
    let metrics = dir.join("metrics.csv");
    write_metrics(&metrics, &out.rows)?;
    emit_plot_data(&dir.join("plot.csv"), &[(method, &out.rows)])?;
    out.checkpoint.save(dir.join("checkpoint.bin"))?;
    Ok(metrics)
}

/// Runs the configured experiment (once, or once per seed), writing
/// `metrics.csv`, `plot.csv` and `checkpoint.bin` under `cfg.out` and, for
/// several seeds, `seed-<s>/` subdirectories plus `summary.csv`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let method = cfg.federation.method.name();
    let Some(seeds) = &cfg.seeds else {
        let (train, test) = load_dataset(&cfg.dataset, cfg.federation.seed)?;
        let out = run_experiment(&cfg.federation, &train, &test)?;
        let path = write_run(&cfg.out, method, &out)?;
        return Ok(RunReport {
            metrics: vec![path],
            final_accuracy: vec![(cfg.federation.seed, out.final_accuracy())],
            summary: None,
        });
    };
    let mut report = RunReport {
        metrics: Vec::new(),
        final_accuracy: Vec::new(),
        summary: None,
    };
    for &seed in seeds {
        let mut fed = cfg.federation.clone();
        fed.seed = seed;
        let (train, test) = load_dataset(&cfg.dataset, seed)?;
        let out = run_experiment(&fed, &train, &test)?;
        report
            .metrics
            .push(write_run(&cfg.out.join(format!("seed-{seed}")), method, &out)?);
        report.final_accuracy.push((seed, out.final_accuracy()));
    }
    let summary = cfg.out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["seed", "final_acc"])?;
    for (s, a) in &report.final_accuracy {
        w.write_record([s.to_string(), a.to_string()])?;
    }
    let accs: Vec<f64> = report.final_accuracy.iter().map(|(_, a)| *a).collect();
    let (m, sd) = mean_std(&accs);
    w.write_record(["mean".to_string(), m.to_string()])?;
    w.write_record(["std".to_string(), sd.to_string()])?;
    w.flush()?;
    report.summary = Some(summary);
    Ok(report)
}

/// Runs the four ablation variants, writing one subdirectory per variant
/// and a combined `plot.csv`.
pub fn run_ablation_to_dir(cfg: &ExperimentConfig) -> Result<Vec<(Ablation, f64)>, HarnessError> {
    cfg.validate()?;
    let (train, test) = load_dataset(&cfg.dataset, cfg.federation.seed)?;
    let runs = run_ablation(&cfg.federation, &train, &test)?;
    ensure_dir(&cfg.out)?;
    for (a, out) in &runs {
        write_run(&cfg.out.join(a.name()), a.name(), out)?;
    }
    let series: Vec<(&str, &[crate::federation::MetricsRow])> =
        runs.iter().map(|(a, o)| (a.name(), o.rows.as_slice())).collect();
    emit_plot_data(&cfg.out.join("plot.csv"), &series)?;
    Ok(runs.iter().map(|(a, o)| (*a, o.final_accuracy())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
